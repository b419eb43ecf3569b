// Request/response types matching the generation service's published schema.

export interface PromptSegment {
  text: string;
  duration_s: number;
}

export type ConstraintKind =
  | 'waypoint'
  | 'dense_path'
  | 'full_body_keyframe'
  | 'end_effector'
  | 'foot_contact';

export interface ConstraintItem {
  kind: ConstraintKind;
  frame?: number;
  start_frame?: number;
  end_frame?: number;
  joint?: string;
  position?: number[];
  positions?: number[][];
  heading?: number[];
  headings?: number[][];
  rotation_6d?: number[];
  contacts?: number[];
}

export interface GenerationRequest {
  prompts: PromptSegment[];
  constraints: ConstraintItem[];
  initial_heading: [number, number];
  guidance: { w_text: number; w_constr: number };
  steps: number;
  seed: number;
  fps: number;
  postprocess: { foot_lock: boolean; exact_constraints: boolean };
}

export interface ConstraintErrors {
  full_body_pos_cm: number | null;
  ee_pos_cm: number | null;
  ee_rot_deg: number | null;
  root2d_pos_cm: number | null;
  contact_match: number | null;
}

export interface MotionDocument {
  version: number;
  fps: number;
  skeleton_id: string;
  n_frames: number;
  joint_positions: number[][][];
  rotations_6d: number[][][];
  contacts: number[][] | null;
  smoothed_root: number[][] | null;
  heading: number[][] | null;
}

export interface GenerationResultPayload {
  motion: MotionDocument;
  errors: ConstraintErrors;
  seed: number;
  timing_s: number;
  segment_boundaries: number[];
  flags: Record<string, unknown>;
}

export interface JobRecord {
  job_id: string;
  status: 'queued' | 'running' | 'done' | 'failed';
  request: unknown;
  created_at: number;
  updated_at: number;
  error: string | null;
  result: { motion_path: string; errors: ConstraintErrors; seed: number } | null;
}

export interface SkeletonDocument {
  version: number;
  skeleton_id: string;
  joint_names: string[];
  parent_index: number[];
  rest_offsets: number[][];
  left_hip_index: number;
  right_hip_index: number;
  foot_joint_indices: number[];
  end_effector_indices: number[];
}
