// Pure playback/overlay logic, kept out of the three.js layer so it is
// testable without a renderer.

import type { ConstraintItem, MotionDocument } from './types.js';

export interface PlaybackClock {
  frame: number;
  playing: boolean;
}

/** Frame index for a wall-clock time, clamped to the motion length. */
export function frameAt(motion: MotionDocument, time_s: number): number {
  const frame = Math.floor(time_s * motion.fps);
  return Math.max(0, Math.min(frame, motion.n_frames - 1));
}

export function durationS(motion: MotionDocument): number {
  return motion.n_frames / motion.fps;
}

/** Bones as [parent, child] index pairs from the parent table. */
export function bonePairs(parentIndex: number[]): [number, number][] {
  const pairs: [number, number][] = [];
  parentIndex.forEach((parent, child) => {
    if (parent >= 0) pairs.push([parent, child]);
  });
  return pairs;
}

export interface FrameOverlay {
  constrainedJoints: Set<number>;
  isConstrainedFrame: boolean;
}

/** Which joints are constraint-highlighted (red) at a given frame. */
export function constraintOverlay(
  items: ConstraintItem[],
  frame: number,
  jointNames: string[],
  footJointIndices: number[],
): FrameOverlay {
  const constrained = new Set<number>();
  let frameHit = false;
  for (const item of items) {
    const onFrame =
      item.frame === frame ||
      (item.start_frame !== undefined &&
        item.end_frame !== undefined &&
        frame >= item.start_frame &&
        frame <= item.end_frame);
    if (!onFrame) continue;
    frameHit = true;
    switch (item.kind) {
      case 'full_body_keyframe':
        jointNames.forEach((_, i) => constrained.add(i));
        break;
      case 'end_effector': {
        const index = jointNames.indexOf(item.joint ?? '');
        if (index >= 0) constrained.add(index);
        break;
      }
      case 'foot_contact':
        footJointIndices.forEach((i) => constrained.add(i));
        break;
      case 'waypoint':
      case 'dense_path':
        constrained.add(0); // root track: highlight the pelvis
        break;
    }
  }
  return { constrainedJoints: constrained, isConstrainedFrame: frameHit };
}
