// Authoring session state: the prompt timeline, constraint items, playback
// cursor, and generation parameters. Every edit goes through `apply` so the
// undo/redo history stays consistent, and the whole state serializes to a
// GenerationRequest losslessly.

import type { ConstraintItem, GenerationRequest, PromptSegment } from './types.js';

export interface TimelinePrompt extends PromptSegment {
  start_s: number; // derived: prompts are contiguous from 0
}

export interface TimelineSnapshot {
  prompts: PromptSegment[];
  constraints: ConstraintItem[];
  initialHeading: [number, number];
  guidance: { w_text: number; w_constr: number };
  steps: number;
  seed: number;
  fps: number;
  footLock: boolean;
  exactConstraints: boolean;
}

export class ValidationError extends Error {}

const MAX_SEGMENT_S = 10;
const MAX_HISTORY = 200;
const JUNCTION_OVERLAP_S = 0.5; // matches the server's multi-prompt stitching

/** Output frame count: segment frames minus the junction overlaps (the
 * server's accounting; constraints index into this range). */
export function totalFramesOf(prompts: PromptSegment[], fps: number): number {
  const seg = prompts.map((p) => Math.round(p.duration_s * fps));
  if (seg.length <= 1) return seg[0] ?? 0;
  const overlap = Math.max(2, Math.round(JUNCTION_OVERLAP_S * fps));
  return seg.reduce((a, b) => a + b, 0) - (seg.length - 1) * overlap;
}

export class TimelineState {
  private snapshot: TimelineSnapshot;
  private undoStack: string[] = [];
  private redoStack: string[] = [];
  cursor_s = 0;
  selectedResult: string | null = null;

  constructor(fps = 30) {
    this.snapshot = {
      prompts: [{ text: 'A person walks forward.', duration_s: 4 }],
      constraints: [],
      initialHeading: [1, 0],
      guidance: { w_text: 2, w_constr: 2 },
      steps: 100,
      seed: 0,
      fps,
      footLock: true,
      exactConstraints: true,
    };
  }

  get state(): TimelineSnapshot {
    return this.snapshot;
  }

  get totalDurationS(): number {
    return this.snapshot.prompts.reduce((acc, p) => acc + p.duration_s, 0);
  }

  get totalFrames(): number {
    return totalFramesOf(this.snapshot.prompts, this.snapshot.fps);
  }

  promptRows(): TimelinePrompt[] {
    let start = 0;
    return this.snapshot.prompts.map((p) => {
      const row = { ...p, start_s: start };
      start += p.duration_s;
      return row;
    });
  }

  // -- editing ------------------------------------------------------------

  private apply(mutate: (draft: TimelineSnapshot) => void): void {
    const before = JSON.stringify(this.snapshot);
    const draft: TimelineSnapshot = JSON.parse(before);
    mutate(draft);
    this.validateDraft(draft);
    this.undoStack.push(before);
    if (this.undoStack.length > MAX_HISTORY) this.undoStack.shift();
    this.redoStack = [];
    this.snapshot = draft;
  }

  private validateDraft(draft: TimelineSnapshot): void {
    if (draft.prompts.length === 0) {
      throw new ValidationError('at least one prompt segment is required');
    }
    for (const p of draft.prompts) {
      if (!(p.duration_s > 0)) throw new ValidationError('durations must be positive');
      if (p.duration_s > MAX_SEGMENT_S) {
        throw new ValidationError(`segment duration exceeds ${MAX_SEGMENT_S}s`);
      }
    }
    const frames = totalFramesOf(draft.prompts, draft.fps);
    for (const item of draft.constraints) {
      const check = (f: number | undefined, label: string) => {
        if (f === undefined) return;
        if (f < 0 || f >= frames) {
          throw new ValidationError(`${label} ${f} outside [0, ${frames})`);
        }
      };
      check(item.frame, 'frame');
      check(item.start_frame, 'start_frame');
      check(item.end_frame, 'end_frame');
      if (item.kind === 'dense_path') {
        const n = (item.end_frame ?? 0) - (item.start_frame ?? 0) + 1;
        if (!item.positions || item.positions.length !== n) {
          throw new ValidationError(`dense_path needs ${n} positions`);
        }
      }
      if (item.kind === 'waypoint' && (!item.position || item.position.length !== 2)) {
        throw new ValidationError('waypoint needs a 2D position');
      }
    }
    // mirror the server's duplicate-target rules: one root constraint per
    // frame, one position/rotation per (joint, frame)
    const rootFrames = new Set<number>();
    const claimRoot = (frame: number) => {
      if (rootFrames.has(frame)) {
        throw new ValidationError(`duplicate root constraint at frame ${frame}`);
      }
      rootFrames.add(frame);
    };
    const eeClaims = new Set<string>();
    for (const item of draft.constraints) {
      if (item.kind === 'waypoint' || item.kind === 'full_body_keyframe') {
        claimRoot(item.frame!);
      } else if (item.kind === 'dense_path') {
        for (let f = item.start_frame!; f <= item.end_frame!; f++) claimRoot(f);
      } else if (item.kind === 'end_effector') {
        for (const channel of ['position', 'rotation_6d'] as const) {
          if (item[channel] === undefined) continue;
          const key = `${item.joint}:${item.frame}:${channel}`;
          if (eeClaims.has(key)) {
            throw new ValidationError(
              `duplicate ${channel} constraint on ${item.joint} at frame ${item.frame}`,
            );
          }
          eeClaims.add(key);
        }
      }
    }
    const norm = Math.hypot(draft.initialHeading[0], draft.initialHeading[1]);
    if (Math.abs(norm - 1) > 1e-3) throw new ValidationError('initial heading must be unit');
  }

  addPrompt(text: string, duration_s: number): void {
    this.apply((d) => d.prompts.push({ text, duration_s }));
  }

  editPrompt(index: number, text: string, duration_s: number): void {
    this.apply((d) => {
      if (!d.prompts[index]) throw new ValidationError(`no prompt at ${index}`);
      d.prompts[index] = { text, duration_s };
    });
  }

  removePrompt(index: number): void {
    this.apply((d) => {
      if (!d.prompts[index]) throw new ValidationError(`no prompt at ${index}`);
      d.prompts.splice(index, 1);
    });
  }

  addConstraint(item: ConstraintItem): number {
    let index = -1;
    this.apply((d) => {
      index = d.constraints.length;
      d.constraints.push(item);
    });
    return index;
  }

  editConstraint(index: number, item: ConstraintItem): void {
    this.apply((d) => {
      if (!d.constraints[index]) throw new ValidationError(`no constraint at ${index}`);
      d.constraints[index] = item;
    });
  }

  removeConstraint(index: number): void {
    this.apply((d) => {
      if (!d.constraints[index]) throw new ValidationError(`no constraint at ${index}`);
      d.constraints.splice(index, 1);
    });
  }

  dragWaypoint(index: number, x: number, z: number): void {
    this.apply((d) => {
      const item = d.constraints[index];
      if (!item || item.kind !== 'waypoint') {
        throw new ValidationError(`constraint ${index} is not a waypoint`);
      }
      item.position = [x, z];
    });
  }

  drawPath(startFrame: number, points: [number, number][]): void {
    this.apply((d) => {
      d.constraints.push({
        kind: 'dense_path',
        start_frame: startFrame,
        end_frame: startFrame + points.length - 1,
        positions: points.map((p) => [p[0], p[1]]),
      });
    });
  }

  setSeed(seed: number): void {
    this.apply((d) => void (d.seed = seed));
  }

  setGuidance(w_text: number, w_constr: number): void {
    this.apply((d) => void (d.guidance = { w_text, w_constr }));
  }

  setInitialHeading(angleRad: number): void {
    this.apply((d) => void (d.initialHeading = [Math.cos(angleRad), Math.sin(angleRad)]));
  }

  setPostprocess(footLock: boolean, exactConstraints: boolean): void {
    this.apply((d) => {
      d.footLock = footLock;
      d.exactConstraints = exactConstraints;
    });
  }

  scrub(time_s: number): void {
    // playback cursor is view state, not undoable
    this.cursor_s = Math.max(0, Math.min(time_s, this.totalDurationS));
  }

  // -- history ------------------------------------------------------------

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) return false;
    this.redoStack.push(JSON.stringify(this.snapshot));
    this.snapshot = JSON.parse(prev);
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (next === undefined) return false;
    this.undoStack.push(JSON.stringify(this.snapshot));
    this.snapshot = JSON.parse(next);
    return true;
  }

  // -- serialization ------------------------------------------------------

  serializeRequest(): GenerationRequest {
    const s = this.snapshot;
    return {
      prompts: s.prompts.map((p) => ({ text: p.text, duration_s: p.duration_s })),
      constraints: s.constraints.map((c) => JSON.parse(JSON.stringify(c))),
      initial_heading: [s.initialHeading[0], s.initialHeading[1]],
      guidance: { ...s.guidance },
      steps: s.steps,
      seed: s.seed,
      fps: s.fps,
      postprocess: { foot_lock: s.footLock, exact_constraints: s.exactConstraints },
    };
  }

  static fromRequest(request: GenerationRequest): TimelineState {
    const state = new TimelineState(request.fps);
    state.snapshot = {
      prompts: request.prompts.map((p) => ({ ...p })),
      constraints: request.constraints.map((c) => JSON.parse(JSON.stringify(c))),
      initialHeading: [request.initial_heading[0], request.initial_heading[1]],
      guidance: { ...request.guidance },
      steps: request.steps,
      seed: request.seed,
      fps: request.fps,
      footLock: request.postprocess.foot_lock,
      exactConstraints: request.postprocess.exact_constraints,
    };
    return state;
  }
}
