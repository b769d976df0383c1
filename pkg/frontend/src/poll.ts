/** Timeout-chained poller; a tick that throws reports but keeps polling. */

export interface Poller {
  start(): void;
  stop(): void;
  running(): boolean;
}

export function createPoller(
  tick: () => Promise<void>,
  intervalMs: number,
  onError: (err: unknown) => void = () => {},
): Poller {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let active = false;

  async function loop(): Promise<void> {
    if (!active) return;
    try {
      await tick();
    } catch (err) {
      onError(err);
    }
    if (active) {
      timer = setTimeout(loop, intervalMs);
    }
  }

  return {
    start() {
      if (active) return;
      active = true;
      void loop();
    },
    stop() {
      active = false;
      if (timer !== null) clearTimeout(timer);
      timer = null;
    },
    running: () => active,
  };
}
