import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';

import { describe, expect, it } from 'vitest';

import { fuzzRequests } from '../src/fuzz.js';
import { validateAgainstSchema } from '../src/schemaValidator.js';

const here = dirname(fileURLToPath(import.meta.url));
const schema = JSON.parse(
  readFileSync(join(here, '..', 'schema', 'generation_request.schema.json'), 'utf-8'),
);

describe('schema validator', () => {
  it('accepts a canonical request', () => {
    const request = {
      prompts: [{ text: 'A person walks forward.', duration_s: 4 }],
      constraints: [{ kind: 'waypoint', frame: 10, position: [1, 0] }],
      initial_heading: [1, 0],
      guidance: { w_text: 2, w_constr: 2 },
      steps: 100,
      seed: 0,
      fps: 30,
      postprocess: { foot_lock: true, exact_constraints: true },
    };
    expect(validateAgainstSchema(request, schema)).toEqual([]);
  });

  it('rejects structural violations', () => {
    const bad = [
      { prompts: [] }, // minItems
      { prompts: [{ text: 'x', duration_s: 0 }] }, // exclusiveMinimum
      { prompts: [{ text: 'x', duration_s: 20 }] }, // maximum
      {
        prompts: [{ text: 'x', duration_s: 2 }],
        constraints: [{ kind: 'teleport' }],
      }, // enum
      {
        prompts: [{ text: 'x', duration_s: 2 }],
        bogus_field: 1,
      }, // additionalProperties
      {
        prompts: [{ text: 'x', duration_s: 2 }],
        steps: 0,
      }, // minimum
    ];
    for (const doc of bad) {
      expect(validateAgainstSchema(doc, schema).length).toBeGreaterThan(0);
    }
  });

  it('every fuzzed UI session serializes to a schema-valid request (1k)', () => {
    const requests = fuzzRequests(1000, 42);
    expect(requests).toHaveLength(1000);
    for (const request of requests) {
      const issues = validateAgainstSchema(request, schema);
      expect(issues).toEqual([]);
    }
  });
});
