// API types and the canonical ViewState -> query string mapping.
// The serialization here must stay in lockstep with the gateway's
// parameter names; the unit tests pin the exact strings.

export type UseCase = "traffic" | "lighting";

export type ViewKind =
  | "traffic_series"
  | "traffic_compare_locations"
  | "traffic_compare_dates"
  | "energy_compare_locations"
  | "energy_compare_dates"
  | "energy_total";

export const VEHICLE_CLASSES = [
  "twmv", "carv", "busv", "lgv", "hgv",
  "hgvr2", "hgvr3", "hgvr4", "hgva3", "hgva5",
] as const;
export type VehicleClass = (typeof VEHICLE_CLASSES)[number];

export type Distribution = "total" | "average_per_minute";
export type BucketSize = "minute" | "hour" | "day";
export type GroupBy = "time_bucket" | "sensor" | "date";

export interface ViewState {
  view: ViewKind;
  dateFrom: string; // YYYY-MM-DD (UTC)
  dateTo: string;
  hourFrom: number; // 0..23 inclusive window
  hourTo: number;
  sensors: string[];
  classes: VehicleClass[]; // traffic views only; empty = all ten
  distribution: Distribution;
  bucket: BucketSize;
  live: boolean;
}

export interface SeriesGroup {
  label: string;
  points: [string, number][];
}

export interface SeriesResult {
  groups: SeriesGroup[];
}

export interface EnergyTotals {
  sensor: string;
  date: string;
  hour_from: number;
  hour_to: number;
  window_seconds: number;
  on_seconds: number;
  off_seconds: number;
  energy_wh: number;
  hourly_wh: number[];
}

export interface SensorInfo {
  id: string;
  label: string;
}

export interface Meta {
  traffic: { sensors: SensorInfo[]; date_min: string | null; date_max: string | null };
  lighting: { sensors: SensorInfo[]; date_min: string | null; date_max: string | null };
  power_w: number;
  tick_seconds: { traffic: number; lighting: number };
}

export function useCaseOf(view: ViewKind): UseCase {
  return view.startsWith("traffic") ? "traffic" : "lighting";
}

export function groupByOf(view: ViewKind): GroupBy {
  if (view === "traffic_compare_locations" || view === "energy_compare_locations") return "sensor";
  if (view === "traffic_compare_dates" || view === "energy_compare_dates") return "date";
  return "time_bucket";
}

export function endpointOf(view: ViewKind): string {
  if (view === "energy_total") return "/api/lighting/total";
  return useCaseOf(view) === "traffic" ? "/api/traffic/series" : "/api/lighting/energy";
}

// Client-side mirror of the server's validation rules, so invalid filter
// combinations never go on the wire.
export function validate(state: ViewState): string | null {
  if (!state.dateFrom || !state.dateTo) return "date range is required";
  if (state.dateFrom > state.dateTo) return "date range is reversed";
  if (state.hourFrom < 0 || state.hourFrom > 23) return "hour_from must be 0..23";
  if (state.hourTo < 0 || state.hourTo > 23) return "hour_to must be 0..23";
  if (state.hourFrom > state.hourTo) return "hour range is reversed";
  const groupBy = groupByOf(state.view);
  if (groupBy === "date" && state.sensors.length !== 1) {
    return "comparing dates needs exactly one location";
  }
  if (groupBy === "sensor" && state.dateFrom !== state.dateTo && state.bucket === "minute") {
    return "comparing locations across dates needs hour or day buckets";
  }
  if (state.view === "energy_total") {
    if (state.sensors.length !== 1) return "energy total needs exactly one location";
    if (state.dateFrom !== state.dateTo) return "energy total covers a single date";
  }
  return null;
}

// Canonical query string: fixed parameter order, defaults spelled out,
// list parameters comma-joined in selection order.
export function queryString(state: ViewState): string {
  if (state.view === "energy_total") {
    return [
      `sensor=${encodeURIComponent(state.sensors[0] ?? "")}`,
      `date=${state.dateFrom}`,
      `hour_from=${state.hourFrom}`,
      `hour_to=${state.hourTo}`,
    ].join("&");
  }
  const parts = [
    `from=${state.dateFrom}`,
    `to=${state.dateTo}`,
    `hour_from=${state.hourFrom}`,
    `hour_to=${state.hourTo}`,
  ];
  if (state.sensors.length) {
    parts.push(`sensors=${state.sensors.map(encodeURIComponent).join(",")}`);
  }
  if (useCaseOf(state.view) === "traffic") {
    if (state.classes.length) parts.push(`classes=${state.classes.join(",")}`);
    parts.push(`distribution=${state.distribution}`);
  }
  parts.push(`group_by=${groupByOf(state.view)}`);
  parts.push(`bucket=${state.bucket}`);
  return parts.join("&");
}

export function requestPath(state: ViewState): string {
  return `${endpointOf(state.view)}?${queryString(state)}`;
}
