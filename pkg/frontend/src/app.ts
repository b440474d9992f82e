// DOM-free session state machine: keeps the prompt history mirrored
// with the server, serializes submissions (one in-flight request,
// later gestures queue), and surfaces the switch hint.

import { ApiClient, PromptResult, Transform } from './client';
import { PromptBody } from './prompts';

export interface HistoryEntry {
  prompt: PromptBody;
  stepIndex: number;
  iou: number | null;
  maskPngB64: string;
}

export interface AppEvents {
  onStep?: (entry: HistoryEntry, result: PromptResult) => void;
  onSwitchHint?: (suggested: boolean) => void;
  onError?: (err: unknown) => void;
}

let requestCounter = 0;

export class SessionController {
  history: HistoryEntry[] = [];
  switchSuggested = false;
  sessionId: string | null = null;
  transform: Transform | null = null;

  private queue: PromptBody[] = [];
  private inFlight = false;
  private imagePngB64 = '';
  private gtPngB64: string | undefined;

  constructor(
    private client: ApiClient,
    private events: AppEvents = {},
  ) {}

  async start(imagePngB64: string, gtPngB64?: string): Promise<void> {
    this.imagePngB64 = imagePngB64;
    this.gtPngB64 = gtPngB64;
    const created = await this.client.createSession(imagePngB64, gtPngB64);
    this.sessionId = created.session_id;
    this.transform = created.transform;
    this.history = [];
    this.switchSuggested = false;
    this.queue = [];
  }

  // Queue a prompt; submissions happen strictly in order with at most
  // one request in flight.
  submit(prompt: PromptBody): void {
    this.queue.push(prompt);
    void this.pump();
  }

  // Drain the local queue.  Resolves when everything queued so far has
  // been answered (or failed); used by tests to await quiescence.
  async flush(): Promise<void> {
    while (this.queue.length > 0 || this.inFlight) {
      await this.pump();
      await new Promise((r) => setTimeout(r, 1));
    }
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.queue.length === 0 || !this.sessionId) return;
    this.inFlight = true;
    const prompt = this.queue.shift()!;
    prompt.request_id = prompt.request_id ?? `ui-${++requestCounter}`;
    try {
      const result = await this.client.applyPrompt(this.sessionId, prompt);
      const entry: HistoryEntry = {
        prompt,
        stepIndex: result.step_index,
        iou: result.iou ?? null,
        maskPngB64: result.mask_png_b64,
      };
      this.history.push(entry);
      this.switchSuggested = result.switch_suggested;
      this.events.onStep?.(entry, result);
      this.events.onSwitchHint?.(result.switch_suggested);
    } catch (err) {
      // failed step leaves history untouched; surface and move on
      this.events.onError?.(err);
    } finally {
      this.inFlight = false;
    }
    if (this.queue.length > 0) void this.pump();
  }

  // The server has no step-undo, so undo recreates the session and
  // replays every prompt but the last.
  async undo(): Promise<void> {
    if (!this.sessionId || this.history.length === 0) return;
    await this.flush();
    const replay = this.history.slice(0, -1).map((h) => ({
      ...h.prompt,
      request_id: undefined,
    }));
    await this.client.deleteSession(this.sessionId);
    await this.start(this.imagePngB64, this.gtPngB64);
    for (const p of replay) this.submit(p);
    await this.flush();
  }

  async close(): Promise<void> {
    if (this.sessionId) {
      await this.client.deleteSession(this.sessionId);
      this.sessionId = null;
    }
  }
}
