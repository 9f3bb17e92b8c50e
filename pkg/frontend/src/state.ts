// Live-refresh gating: on a gateway tick, re-query only when the tick's
// use case matches the active view AND the filter window includes the
// current date. A window entirely in the past never re-fetches.

import { useCaseOf, type UseCase, type ViewState } from "./api.js";

export function windowIncludesToday(state: Pick<ViewState, "dateFrom" | "dateTo">, today: string): boolean {
  return state.dateFrom <= today && today <= state.dateTo;
}

export function shouldRefetch(state: ViewState, tickUseCase: UseCase, today: string): boolean {
  return (
    state.live &&
    useCaseOf(state.view) === tickUseCase &&
    windowIncludesToday(state, today)
  );
}

export function utcToday(now: Date = new Date()): string {
  return now.toISOString().slice(0, 10);
}

/** Drives re-queries from SSE ticks; at most one in-flight fetch
 * (latest-wins: a newer request aborts the running one). */
export class RefreshController {
  private state: ViewState | null = null;
  refetches = 0;

  constructor(
    private readonly fetchFn: (state: ViewState) => void,
    private readonly today: () => string = () => utcToday(),
  ) {}

  setState(state: ViewState | null): void {
    this.state = state;
  }

  onTick(tickUseCase: UseCase): void {
    if (this.state && shouldRefetch(this.state, tickUseCase, this.today())) {
      this.refetches += 1;
      this.fetchFn(this.state);
    }
  }
}
