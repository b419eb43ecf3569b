// Minimal JSON Schema validator covering the subset the service's pydantic
// models emit (draft 2020-12): $defs/$ref, anyOf, enum, basic types, numeric
// bounds, array bounds, required, additionalProperties.

export interface ValidationIssue {
  path: string;
  message: string;
}

type Schema = Record<string, any>;

export function validateAgainstSchema(value: unknown, schema: Schema): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  visit(value, schema, schema, '$', issues);
  return issues;
}

function resolveRef(root: Schema, ref: string): Schema {
  if (!ref.startsWith('#/')) throw new Error(`unsupported $ref: ${ref}`);
  let node: any = root;
  for (const part of ref.slice(2).split('/')) {
    node = node?.[part];
    if (node === undefined) throw new Error(`unresolvable $ref: ${ref}`);
  }
  return node;
}

function typeOf(value: unknown): string {
  if (value === null) return 'null';
  if (Array.isArray(value)) return 'array';
  return typeof value; // string | number | boolean | object
}

function matchesType(value: unknown, expected: string): boolean {
  const actual = typeOf(value);
  if (expected === 'integer') return actual === 'number' && Number.isInteger(value as number);
  if (expected === 'number') return actual === 'number';
  return actual === expected;
}

function visit(
  value: unknown,
  schema: Schema,
  root: Schema,
  path: string,
  issues: ValidationIssue[],
): void {
  if (schema.$ref) {
    visit(value, resolveRef(root, schema.$ref), root, path, issues);
    return;
  }
  if (schema.anyOf) {
    for (const option of schema.anyOf) {
      const sub: ValidationIssue[] = [];
      visit(value, option, root, path, sub);
      if (sub.length === 0) return;
    }
    issues.push({ path, message: 'matches no anyOf option' });
    return;
  }
  if (schema.enum && !schema.enum.some((v: unknown) => deepEqual(v, value))) {
    issues.push({ path, message: `not one of ${JSON.stringify(schema.enum)}` });
    return;
  }
  if (schema.const !== undefined && !deepEqual(schema.const, value)) {
    issues.push({ path, message: `expected const ${JSON.stringify(schema.const)}` });
    return;
  }
  if (schema.type && !matchesType(value, schema.type)) {
    issues.push({ path, message: `expected ${schema.type}, got ${typeOf(value)}` });
    return;
  }

  if (typeof value === 'number') {
    if (schema.minimum !== undefined && value < schema.minimum) {
      issues.push({ path, message: `below minimum ${schema.minimum}` });
    }
    if (schema.maximum !== undefined && value > schema.maximum) {
      issues.push({ path, message: `above maximum ${schema.maximum}` });
    }
    if (schema.exclusiveMinimum !== undefined && value <= schema.exclusiveMinimum) {
      issues.push({ path, message: `not above ${schema.exclusiveMinimum}` });
    }
    if (schema.exclusiveMaximum !== undefined && value >= schema.exclusiveMaximum) {
      issues.push({ path, message: `not below ${schema.exclusiveMaximum}` });
    }
  }

  if (Array.isArray(value)) {
    if (schema.minItems !== undefined && value.length < schema.minItems) {
      issues.push({ path, message: `fewer than ${schema.minItems} items` });
    }
    if (schema.maxItems !== undefined && value.length > schema.maxItems) {
      issues.push({ path, message: `more than ${schema.maxItems} items` });
    }
    if (schema.items) {
      value.forEach((item, i) => visit(item, schema.items, root, `${path}[${i}]`, issues));
    }
  }

  if (typeOf(value) === 'object') {
    const obj = value as Record<string, unknown>;
    for (const name of schema.required ?? []) {
      if (!(name in obj)) issues.push({ path, message: `missing required property ${name}` });
    }
    const props: Record<string, Schema> = schema.properties ?? {};
    for (const [name, propValue] of Object.entries(obj)) {
      if (name in props) {
        visit(propValue, props[name], root, `${path}.${name}`, issues);
      } else if (schema.additionalProperties === false) {
        issues.push({ path, message: `unexpected property ${name}` });
      }
    }
  }
}

function deepEqual(a: unknown, b: unknown): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}
