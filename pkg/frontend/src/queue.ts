/** At most one in-flight submission; a newer submission while busy
 * supersedes any queued one, and superseded callers are told so. */

export type GateResult<T> =
  | { kind: "done"; value: T }
  | { kind: "superseded" };

interface Pending<T> {
  task: () => Promise<T>;
  resolve: (r: GateResult<T>) => void;
  reject: (e: unknown) => void;
}

export class RequestGate<T> {
  private busy = false;
  private pending: Pending<T> | null = null;

  submit(task: () => Promise<T>): Promise<GateResult<T>> {
    return new Promise((resolve, reject) => {
      if (this.busy) {
        if (this.pending) this.pending.resolve({ kind: "superseded" });
        this.pending = { task, resolve, reject };
        return;
      }
      this.run({ task, resolve, reject });
    });
  }

  get inFlight(): boolean {
    return this.busy;
  }

  private run(job: Pending<T>): void {
    this.busy = true;
    job.task().then(
      (value) => {
        job.resolve({ kind: "done", value });
        this.finish();
      },
      (err) => {
        job.reject(err);
        this.finish();
      },
    );
  }

  private finish(): void {
    this.busy = false;
    const next = this.pending;
    this.pending = null;
    if (next) this.run(next);
  }
}
