// Thin typed wrapper over the /v1 session API.

import { PromptBody } from './prompts';

export interface Transform {
  input_size: number;
  scale: number;
  offset_x: number;
  offset_y: number;
  original_width: number;
  original_height: number;
}

export interface CreateSessionResult {
  session_id: string;
  transform: Transform;
}

export interface ProbStats {
  mean: number;
  min: number;
  max: number;
  foreground_fraction: number;
}

export interface PromptResult {
  step_index: number;
  mask_png_b64: string;
  prob_png_b64: string;
  prob_stats: ProbStats;
  iou?: number;
  switch_suggested: boolean;
}

export interface StepSummary {
  kind: string;
  positive: boolean;
  geometry: unknown;
  iou: number | null;
}

export interface SessionInfo {
  session_id: string;
  created_at: number;
  transform: Transform;
  has_gt: boolean;
  steps: StepSummary[];
  iou_trace: number[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message?: string,
  ) {
    super(message ?? `${status}: ${code}`);
  }
}

async function throwApiError(res: Response): Promise<never> {
  let code = 'unknown';
  try {
    const body = await res.json();
    code = body?.detail?.code ?? body?.code ?? 'unknown';
  } catch {
    /* non-JSON body */
  }
  throw new ApiError(res.status, code);
}

export class ApiClient {
  constructor(private baseUrl = '') {}

  async health(): Promise<{ status: string; version: string }> {
    const res = await fetch(`${this.baseUrl}/v1/health`);
    if (!res.ok) await throwApiError(res);
    return res.json();
  }

  async createSession(
    imagePngB64: string,
    gtPngB64?: string,
  ): Promise<CreateSessionResult> {
    const body: Record<string, string> = { image_png_b64: imagePngB64 };
    if (gtPngB64) body.gt_png_b64 = gtPngB64;
    const res = await fetch(`${this.baseUrl}/v1/sessions`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!res.ok) await throwApiError(res);
    return res.json();
  }

  async applyPrompt(
    sessionId: string,
    prompt: PromptBody,
  ): Promise<PromptResult> {
    const res = await fetch(
      `${this.baseUrl}/v1/sessions/${sessionId}/prompts`,
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(prompt),
      },
    );
    if (!res.ok) await throwApiError(res);
    return res.json();
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const res = await fetch(`${this.baseUrl}/v1/sessions/${sessionId}`);
    if (!res.ok) await throwApiError(res);
    return res.json();
  }

  async deleteSession(sessionId: string): Promise<void> {
    const res = await fetch(`${this.baseUrl}/v1/sessions/${sessionId}`, {
      method: 'DELETE',
    });
    if (!res.ok && res.status !== 404) await throwApiError(res);
  }
}
