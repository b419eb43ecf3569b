// HTTP client for the generation service. All network access in the app goes
// through this module; transient failures retry with exponential backoff.

import type {
  GenerationRequest,
  GenerationResultPayload,
  JobRecord,
  MotionDocument,
  SkeletonDocument,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public payload: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(payload)}`);
  }
}

export interface ClientOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
  maxRetries?: number;
  retryDelayMs?: number;
  sleepFn?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class GenerationClient {
  private baseUrl: string;
  private fetchFn: typeof fetch;
  private maxRetries: number;
  private retryDelayMs: number;
  private sleepFn: (ms: number) => Promise<void>;

  constructor(options: ClientOptions = {}) {
    this.baseUrl = options.baseUrl ?? '';
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
    this.maxRetries = options.maxRetries ?? 3;
    this.retryDelayMs = options.retryDelayMs ?? 500;
    this.sleepFn = options.sleepFn ?? defaultSleep;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let lastError: unknown;
    for (let attempt = 0; attempt <= this.maxRetries; attempt++) {
      try {
        const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
        if (!response.ok) {
          const payload = await response.json().catch(() => ({}));
          throw new ApiError(response.status, payload);
        }
        return (await response.json()) as T;
      } catch (error) {
        // client errors are final; network failures retry with backoff
        if (error instanceof ApiError && error.status < 500) throw error;
        lastError = error;
        if (attempt < this.maxRetries) {
          await this.sleepFn(this.retryDelayMs * 2 ** attempt);
        }
      }
    }
    throw lastError;
  }

  health(): Promise<{ status: string; model_id: string | null; skeleton_id: string }> {
    return this.request('/v1/health');
  }

  skeleton(): Promise<SkeletonDocument> {
    return this.request('/v1/skeleton');
  }

  requestSchema(): Promise<Record<string, unknown>> {
    return this.request('/v1/schema/generation_request');
  }

  submitJob(body: GenerationRequest, idempotencyKey?: string): Promise<{ job_id: string }> {
    const headers: Record<string, string> = { 'Content-Type': 'application/json' };
    if (idempotencyKey) headers['Idempotency-Key'] = idempotencyKey;
    return this.request('/v1/generate', {
      method: 'POST',
      headers,
      body: JSON.stringify(body),
    });
  }

  generateSync(body: GenerationRequest): Promise<GenerationResultPayload> {
    return this.request('/v1/generate?sync=true', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  job(jobId: string): Promise<JobRecord> {
    return this.request(`/v1/jobs/${jobId}`);
  }

  jobMotion(jobId: string): Promise<MotionDocument> {
    return this.request(`/v1/jobs/${jobId}/motion`);
  }

  metrics(motion: MotionDocument, constraints: unknown[]): Promise<{
    constraint_errors: Record<string, number | null>;
    foot_skate_cm_s: number | null;
  }> {
    return this.request('/v1/metrics', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ motion, constraints }),
    });
  }

  /** Poll at 1 Hz until the job reaches a terminal state. */
  async waitForJob(
    jobId: string,
    onUpdate?: (record: JobRecord) => void,
    pollMs = 1000,
  ): Promise<JobRecord> {
    for (;;) {
      const record = await this.job(jobId);
      onUpdate?.(record);
      if (record.status === 'done' || record.status === 'failed') return record;
      await this.sleepFn(pollMs);
    }
  }
}
