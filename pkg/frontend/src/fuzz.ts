// Random UI action sequences for schema-conformance fuzzing: every sequence
// of edits the UI can perform must serialize to a request the server accepts.

import { TimelineState, ValidationError } from './state.js';
import type { ConstraintItem, GenerationRequest } from './types.js';

// deterministic LCG so fuzz runs are reproducible
export class Rng {
  constructor(private state: number) {}

  next(): number {
    this.state = (this.state * 1664525 + 1013904223) >>> 0;
    return this.state / 0x100000000;
  }

  int(lo: number, hi: number): number {
    return lo + Math.floor(this.next() * (hi - lo));
  }

  pick<T>(items: readonly T[]): T {
    return items[this.int(0, items.length)];
  }
}

const PROMPTS = [
  'A person walks forward.',
  'A person waves their right hand.',
  'A person squats down.',
  'Someone turns in place to the left.',
  'A person walks forward then waves.',
];

const JOINTS = ['left_hand', 'right_hand', 'left_toe', 'right_toe'];

function randomConstraint(rng: Rng, maxFrame: number): ConstraintItem {
  const frame = rng.int(0, Math.max(1, maxFrame));
  switch (rng.int(0, 5)) {
    case 0:
      return {
        kind: 'waypoint',
        frame,
        position: [rng.next() * 4 - 2, rng.next() * 4 - 2],
        ...(rng.next() < 0.3 ? { heading: headingOf(rng) } : {}),
      };
    case 1: {
      const length = rng.int(2, 20);
      const start = rng.int(0, Math.max(1, maxFrame - length));
      const positions = Array.from({ length }, (_, i) => [0.05 * i, rng.next() * 0.2]);
      return { kind: 'dense_path', start_frame: start, end_frame: start + length - 1, positions };
    }
    case 2: {
      const positions = Array.from({ length: 27 }, (_, j) => [0.01 * j, 0.9, -0.01 * j]);
      return { kind: 'full_body_keyframe', frame, positions };
    }
    case 3: {
      const item: ConstraintItem = { kind: 'end_effector', frame, joint: rng.pick(JOINTS) };
      if (rng.next() < 0.7) item.position = [rng.next(), rng.next() * 1.6, rng.next()];
      if (rng.next() < 0.5 || item.position === undefined) {
        item.rotation_6d = [1, 0, 0, 0, 1, 0];
      }
      return item;
    }
    default:
      return {
        kind: 'foot_contact',
        frame,
        contacts: [rng.int(0, 2), rng.int(0, 2), rng.int(0, 2), rng.int(0, 2)],
      };
  }
}

function headingOf(rng: Rng): number[] {
  const angle = rng.next() * Math.PI * 2;
  return [Math.cos(angle), Math.sin(angle)];
}

/** Drive a TimelineState through a random edit session; returns the request. */
export function fuzzSession(seed: number, actions = 12): GenerationRequest {
  const rng = new Rng(seed + 1);
  const state = new TimelineState();
  for (let i = 0; i < actions; i++) {
    const frames = state.totalFrames;
    try {
      switch (rng.int(0, 10)) {
        case 0:
          state.addPrompt(rng.pick(PROMPTS), 1 + rng.next() * 6);
          break;
        case 1:
          state.editPrompt(
            rng.int(0, state.state.prompts.length),
            rng.pick(PROMPTS),
            1 + rng.next() * 6,
          );
          break;
        case 2:
          if (state.state.prompts.length > 1) {
            state.removePrompt(rng.int(0, state.state.prompts.length));
          }
          break;
        case 3:
        case 4:
          state.addConstraint(randomConstraint(rng, frames));
          break;
        case 5:
          if (state.state.constraints.length > 0) {
            state.removeConstraint(rng.int(0, state.state.constraints.length));
          }
          break;
        case 6:
          state.setSeed(rng.int(0, 10_000));
          break;
        case 7:
          state.setGuidance(rng.next() * 4, rng.next() * 4);
          break;
        case 8:
          state.setInitialHeading(rng.next() * Math.PI * 2);
          break;
        default:
          state.undo() || state.redo();
          break;
      }
    } catch (error) {
      // invalid edits are rejected inline by the state layer; the session
      // simply continues, mirroring how the UI surfaces the error
      if (!(error instanceof ValidationError)) throw error;
    }
  }
  return state.serializeRequest();
}

export function fuzzRequests(count: number, seed = 0): GenerationRequest[] {
  return Array.from({ length: count }, (_, i) => fuzzSession(seed + i * 7919));
}
