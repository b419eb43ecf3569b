// App assembly: timeline panel + 3D viewer + generation loop.

import { GenerationClient } from './api.js';
import { TimelineState, ValidationError } from './state.js';
import { durationS } from './playback.js';
import { SkeletonViewer } from './viewer.js';
import type { ConstraintErrors, GenerationResultPayload, MotionDocument } from './types.js';

interface StoredResult {
  label: string;
  motion: MotionDocument;
  errors: ConstraintErrors;
  seed: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = '',
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  Object.entries(attrs).forEach(([k, v]) => node.setAttribute(k, v));
  if (text) node.textContent = text;
  return node;
}

async function boot(): Promise<void> {
  const client = new GenerationClient({ baseUrl: (window as any).KIMODO_API ?? '' });
  const state = new TimelineState();
  const results: StoredResult[] = [];

  const root = document.getElementById('app')!;
  const viewerPane = el('div', { id: 'viewer' });
  const sidePane = el('div', { id: 'side' });
  const timelinePane = el('div', { id: 'timeline' });
  root.append(viewerPane, sidePane, timelinePane);

  const viewer = new SkeletonViewer(viewerPane);
  const skeleton = await client.skeleton();
  viewer.setSkeleton(skeleton);

  // --- side panel: options + errors ---------------------------------------
  const status = el('div', { class: 'status' }, 'ready');
  const promptInput = el('textarea', { rows: '2' });
  promptInput.value = state.state.prompts[0].text;
  const durationInput = el('input', { type: 'number', value: '4', min: '0.5', max: '10' });
  const seedInput = el('input', { type: 'number', value: '0' });
  const generateButton = el('button', {}, 'Generate');
  const undoButton = el('button', {}, 'Undo');
  const redoButton = el('button', {}, 'Redo');
  const errorBadges = el('div', { class: 'badges' });
  const resultSelect = el('select');
  sidePane.append(
    el('h3', {}, 'Prompt'),
    promptInput,
    el('label', {}, 'duration (s)'),
    durationInput,
    el('label', {}, 'seed'),
    seedInput,
    generateButton,
    undoButton,
    redoButton,
    el('h3', {}, 'Achieved errors'),
    errorBadges,
    el('h3', {}, 'Results'),
    resultSelect,
    status,
  );

  const waypointButton = el('button', {}, 'Add waypoint at cursor');
  sidePane.append(waypointButton);

  function refreshBadges(errors: ConstraintErrors): void {
    errorBadges.innerHTML = '';
    const rows: [string, number | null, string][] = [
      ['full body', errors.full_body_pos_cm, 'cm'],
      ['end effector', errors.ee_pos_cm, 'cm'],
      ['ee rotation', errors.ee_rot_deg, 'deg'],
      ['2D root', errors.root2d_pos_cm, 'cm'],
    ];
    for (const [label, value, unit] of rows) {
      if (value === null || value === undefined) continue;
      errorBadges.append(el('span', { class: 'badge' }, `${label}: ${value.toFixed(2)} ${unit}`));
    }
  }

  function addResult(payload: GenerationResultPayload, label: string): void {
    results.push({ label, motion: payload.motion, errors: payload.errors, seed: payload.seed });
    const option = el('option', { value: String(results.length - 1) }, label);
    resultSelect.append(option);
    resultSelect.value = String(results.length - 1);
    viewer.setMotion(payload.motion);
    refreshBadges(payload.errors);
    viewer.play();
  }

  resultSelect.addEventListener('change', () => {
    const chosen = results[Number(resultSelect.value)];
    if (!chosen) return;
    viewer.setMotion(chosen.motion);
    refreshBadges(chosen.errors);
    viewer.play();
  });

  generateButton.addEventListener('click', async () => {
    try {
      state.editPrompt(0, promptInput.value, Number(durationInput.value));
      state.setSeed(Number(seedInput.value));
    } catch (error) {
      if (error instanceof ValidationError) {
        status.textContent = `invalid: ${error.message}`;
        return;
      }
      throw error;
    }
    viewer.setConstraints(state.state.constraints);
    status.textContent = 'submitting...';
    generateButton.setAttribute('disabled', '1');
    try {
      const { job_id } = await client.submitJob(state.serializeRequest());
      const record = await client.waitForJob(job_id, (r) => {
        status.textContent = `job ${job_id.slice(0, 8)}: ${r.status}`;
      });
      if (record.status === 'failed') {
        status.textContent = `failed: ${record.error}`;
        return;
      }
      const motion = await client.jobMotion(job_id);
      addResult(
        {
          motion,
          errors: record.result!.errors,
          seed: record.result!.seed,
          timing_s: 0,
          segment_boundaries: [],
          flags: {},
        },
        `seed ${record.result!.seed} (${new Date().toLocaleTimeString()})`,
      );
      status.textContent = `done: ${motion.n_frames} frames @ ${motion.fps} fps`;
    } catch (error) {
      status.textContent = `error: ${(error as Error).message}`;
    } finally {
      generateButton.removeAttribute('disabled');
    }
  });

  undoButton.addEventListener('click', () => {
    state.undo();
    viewer.setConstraints(state.state.constraints);
  });
  redoButton.addEventListener('click', () => {
    state.redo();
    viewer.setConstraints(state.state.constraints);
  });

  waypointButton.addEventListener('click', () => {
    const frame = Math.min(
      Math.round(viewer.timeS * state.state.fps),
      state.totalFrames - 1,
    );
    try {
      state.addConstraint({ kind: 'waypoint', frame, position: [1.0, 0.0] });
      viewer.setConstraints(state.state.constraints);
      status.textContent = `waypoint added at frame ${frame}`;
    } catch (error) {
      status.textContent = `invalid: ${(error as Error).message}`;
    }
  });

  // --- timeline scrubber ---------------------------------------------------
  const scrubber = el('input', { type: 'range', min: '0', max: '1000', value: '0' });
  timelinePane.append(el('span', {}, 'timeline'), scrubber);
  scrubber.addEventListener('input', () => {
    const motion = results[Number(resultSelect.value)]?.motion;
    if (!motion) return;
    const t = (Number(scrubber.value) / 1000) * durationS(motion);
    viewer.scrub(t);
    state.scrub(t);
  });
}

boot().catch((error) => {
  document.body.textContent = `failed to start: ${error}`;
});
