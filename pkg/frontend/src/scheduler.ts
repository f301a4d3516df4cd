import type { ScenarioRequest, ScenarioResponse } from "./types";

export type Sender = (req: ScenarioRequest) => Promise<ScenarioResponse>;

export interface SchedulerHooks {
  onResult: (res: ScenarioResponse, nonce: number) => void;
  onError: (err: unknown) => void;
  onQueued?: (queued: boolean) => void; // offline banner toggle
}

/**
 * One scenario request in flight at a time; newer submissions replace any
 * pending one (trailing-edge coalescing) and responses carry a nonce so a
 * reply overtaken by a newer submission is discarded. Offline submissions
 * queue (banner on) and flush when connectivity returns.
 */
export class ScenarioScheduler {
  private nonce = 0;
  private inFlight = false;
  private pending: ScenarioRequest | null = null;
  private queuedOffline = false;

  constructor(
    private send: Sender,
    private hooks: SchedulerHooks,
    private isOnline: () => boolean = () =>
      typeof navigator === "undefined" ? true : navigator.onLine,
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  get hasPending(): boolean {
    return this.pending !== null;
  }

  submit(req: ScenarioRequest): void {
    if (!this.isOnline()) {
      this.pending = req; // replace, never drop silently
      if (!this.queuedOffline) {
        this.queuedOffline = true;
        this.hooks.onQueued?.(true);
      }
      return;
    }
    if (this.inFlight) {
      this.pending = req;
      return;
    }
    this.dispatch(req);
  }

  /** Call when connectivity returns; sends the newest queued request. */
  flush(): void {
    if (this.queuedOffline) {
      this.queuedOffline = false;
      this.hooks.onQueued?.(false);
    }
    if (!this.inFlight && this.pending && this.isOnline()) {
      const req = this.pending;
      this.pending = null;
      this.dispatch(req);
    }
  }

  private dispatch(req: ScenarioRequest): void {
    const myNonce = ++this.nonce;
    this.inFlight = true;
    this.send(req).then(
      (res) => this.settle(myNonce, res, null),
      (err) => this.settle(myNonce, null, err),
    );
  }

  private settle(myNonce: number, res: ScenarioResponse | null, err: unknown): void {
    this.inFlight = false;
    const stale = myNonce !== this.nonce || this.pending !== null;
    if (!stale) {
      if (res !== null) this.hooks.onResult(res, myNonce);
      else this.hooks.onError(err);
    } else if (res === null && this.pending === null) {
      this.hooks.onError(err);
    }
    if (this.pending && this.isOnline()) {
      const next = this.pending;
      this.pending = null;
      this.dispatch(next);
    }
  }
}

/** Trailing-edge debounce used for drag streams (fires once per quiet gap). */
export function debounce<A extends unknown[]>(fn: (...args: A) => void, ms: number) {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, ms);
  };
}
