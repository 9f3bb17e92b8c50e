// Dashboard wiring: filter panel, six views, fetch + render, live refresh.

import {
  VEHICLE_CLASSES,
  endpointOf,
  requestPath,
  useCaseOf,
  validate,
  type EnergyTotals,
  type Meta,
  type SeriesResult,
  type VehicleClass,
  type ViewKind,
  type ViewState,
} from "./api.js";
import { hourlyBars, legendHtml, pieChart, seriesChart } from "./charts.js";
import { subscribeTicks } from "./sse.js";
import { RefreshController, utcToday } from "./state.js";

const VIEWS: { kind: ViewKind; title: string }[] = [
  { kind: "traffic_series", title: "Vehicles by date and time" },
  { kind: "traffic_compare_locations", title: "Traffic density by location" },
  { kind: "traffic_compare_dates", title: "Traffic density across dates" },
  { kind: "energy_compare_locations", title: "Energy consumption by location" },
  { kind: "energy_compare_dates", title: "Energy consumption across dates" },
  { kind: "energy_total", title: "Total energy for a location" },
];

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id}`);
  return found as T;
}

class App {
  meta: Meta | null = null;
  state: ViewState = {
    view: "traffic_series",
    dateFrom: utcToday(),
    dateTo: utcToday(),
    hourFrom: 0,
    hourTo: 23,
    sensors: [],
    classes: [],
    distribution: "total",
    bucket: "hour",
    live: true,
  };
  controller = new RefreshController(() => this.refresh());
  inflight: AbortController | null = null;

  async start(): Promise<void> {
    this.renderTabs();
    el<HTMLButtonElement>("retry").addEventListener("click", () => this.refresh());
    try {
      const resp = await fetch("/api/meta");
      this.meta = (await resp.json()) as Meta;
    } catch {
      this.showError("cannot reach the gateway API");
      return;
    }
    const bounds = this.meta[useCaseOf(this.state.view)];
    if (bounds.date_max) {
      this.state.dateFrom = bounds.date_max;
      this.state.dateTo = bounds.date_max;
    }
    this.renderFilters();
    this.controller.setState(this.state);
    subscribeTicks("/api/stream", (useCase) => this.controller.onTick(useCase));
    this.refresh();
  }

  setView(view: ViewKind): void {
    const previous = useCaseOf(this.state.view);
    this.state.view = view;
    if (useCaseOf(view) !== previous) {
      this.state.sensors = [];
      const bounds = this.meta?.[useCaseOf(view)];
      if (bounds?.date_max) {
        this.state.dateFrom = bounds.date_max;
        this.state.dateTo = bounds.date_max;
      }
    }
    // single-sensor views keep just the first selection
    if (view === "energy_total" || view.endsWith("compare_dates")) {
      const all = this.sensorChoices().map((s) => s.id);
      this.state.sensors = [this.state.sensors[0] ?? all[0] ?? ""].filter(Boolean);
      if (view === "energy_total") this.state.dateTo = this.state.dateFrom;
    }
    this.renderTabs();
    this.renderFilters();
    this.controller.setState(this.state);
    this.refresh();
  }

  sensorChoices(): { id: string; label: string }[] {
    return this.meta?.[useCaseOf(this.state.view)].sensors ?? [];
  }

  renderTabs(): void {
    el("tabs").innerHTML = VIEWS.map(
      (v) =>
        `<button class="tab${v.kind === this.state.view ? " active" : ""}" data-view="${v.kind}">${v.title}</button>`,
    ).join("");
    for (const button of el("tabs").querySelectorAll<HTMLButtonElement>("button")) {
      button.addEventListener("click", () => this.setView(button.dataset.view as ViewKind));
    }
  }

  renderFilters(): void {
    const s = this.state;
    const isTraffic = useCaseOf(s.view) === "traffic";
    const singleSensor = s.view === "energy_total" || s.view.endsWith("compare_dates");
    const hours = (selected: number) =>
      Array.from({ length: 24 }, (_, h) => `<option value="${h}"${h === selected ? " selected" : ""}>${String(h).padStart(2, "0")}:00</option>`).join("");
    const sensorInputs = this.sensorChoices()
      .map((sensor) => {
        const checked = s.sensors.length === 0 && !singleSensor ? true : s.sensors.includes(sensor.id);
        const type = singleSensor ? "radio" : "checkbox";
        return `<label><input type="${type}" name="sensor" value="${sensor.id}"${checked ? " checked" : ""}>${sensor.label}</label>`;
      })
      .join("");
    const classInputs = VEHICLE_CLASSES.map(
      (cls) =>
        `<label><input type="checkbox" name="class" value="${cls}"${!s.classes.length || s.classes.includes(cls) ? " checked" : ""}>${cls}</label>`,
    ).join("");

    const bounds = this.meta?.[useCaseOf(s.view)];
    const minmax = bounds?.date_min
      ? ` min="${bounds.date_min}" max="${bounds.date_max ?? ""}"`
      : "";
    el("filters").innerHTML = `
      <div class="row">
        <label>Date range <input type="date" id="f-from" value="${s.dateFrom}"${minmax}>
          ${s.view === "energy_total" ? "" : `&ndash; <input type="date" id="f-to" value="${s.dateTo}"${minmax}>`}
        </label>
        <label>Hours <select id="f-hf">${hours(s.hourFrom)}</select> &ndash; <select id="f-ht">${hours(s.hourTo)}</select></label>
        <label>Bucket <select id="f-bucket">
          ${["minute", "hour", "day"].map((b) => `<option${b === s.bucket ? " selected" : ""}>${b}</option>`).join("")}
        </select></label>
        ${isTraffic ? `<label>Distribution <select id="f-dist">
          <option value="total"${s.distribution === "total" ? " selected" : ""}>Total vehicles</option>
          <option value="average_per_minute"${s.distribution === "average_per_minute" ? " selected" : ""}>Average vehicles per minute</option>
        </select></label>` : ""}
        <label><input type="checkbox" id="f-live"${s.live ? " checked" : ""}> live</label>
      </div>
      <div class="row" id="f-sensors"><span class="k">Locations</span>${sensorInputs || "<em>no data yet</em>"}</div>
      ${isTraffic ? `<div class="row" id="f-classes"><span class="k">Vehicle types</span>${classInputs}</div>` : ""}
    `;
    el("filters").querySelectorAll("input,select").forEach((node) => {
      node.addEventListener("change", () => this.readFilters());
    });
  }

  readFilters(): void {
    const s = this.state;
    s.dateFrom = el<HTMLInputElement>("f-from").value || s.dateFrom;
    const to = document.getElementById("f-to") as HTMLInputElement | null;
    s.dateTo = s.view === "energy_total" ? s.dateFrom : to?.value || s.dateTo;
    s.hourFrom = Number(el<HTMLSelectElement>("f-hf").value);
    s.hourTo = Number(el<HTMLSelectElement>("f-ht").value);
    s.bucket = el<HTMLSelectElement>("f-bucket").value as ViewState["bucket"];
    const dist = document.getElementById("f-dist") as HTMLSelectElement | null;
    if (dist) s.distribution = dist.value as ViewState["distribution"];
    s.live = el<HTMLInputElement>("f-live").checked;
    const picked = [...el("f-sensors").querySelectorAll<HTMLInputElement>("input:checked")].map((i) => i.value);
    const allSensors = this.sensorChoices().map((c) => c.id);
    s.sensors = picked.length === allSensors.length && !s.view.endsWith("compare_dates") && s.view !== "energy_total" ? [] : picked;
    const classBox = document.getElementById("f-classes");
    if (classBox) {
      const classes = [...classBox.querySelectorAll<HTMLInputElement>("input:checked")].map((i) => i.value as VehicleClass);
      s.classes = classes.length === VEHICLE_CLASSES.length ? [] : classes;
    }
    this.controller.setState(s);
    this.refresh();
  }

  async refresh(): Promise<void> {
    const s = this.state;
    const problem = validate(s);
    if (problem) {
      this.showError(problem);
      return;
    }
    this.inflight?.abort();
    const abort = new AbortController();
    this.inflight = abort;
    el("error").hidden = true;
    try {
      const resp = await fetch(requestPath(s), { signal: abort.signal });
      if (!resp.ok) {
        const doc = await resp.json().catch(() => ({ message: resp.statusText }));
        this.showError(doc.message ?? `request failed (${resp.status})`);
        return;
      }
      if (s.view === "energy_total") {
        this.renderTotals((await resp.json()) as EnergyTotals);
      } else {
        this.renderSeries((await resp.json()) as SeriesResult);
      }
    } catch (err) {
      if (!abort.signal.aborted) this.showError(`gateway unreachable: ${err}`);
    }
  }

  renderSeries(result: SeriesResult): void {
    const unit =
      useCaseOf(this.state.view) === "lighting"
        ? "Wh"
        : this.state.distribution === "total"
          ? "vehicles"
          : "vehicles/min";
    el("chart").innerHTML = seriesChart(result.groups, unit);
    el("legend").innerHTML = legendHtml(result.groups.map((g) => g.label));
    const total = result.groups.flatMap((g) => g.points).reduce((acc, p) => acc + p[1], 0);
    el("badge").hidden = total > 0;
    el("title").textContent = VIEWS.find((v) => v.kind === this.state.view)?.title ?? "";
  }

  renderTotals(totals: EnergyTotals): void {
    el("chart").innerHTML =
      `<div class="totals">${pieChart(totals.on_seconds, totals.off_seconds)}${hourlyBars(totals.hourly_wh, "Wh")}</div>` +
      `<p class="caption">${totals.sensor} on ${totals.date}: ${totals.energy_wh.toFixed(3)} Wh ` +
      `(${totals.on_seconds}s on / ${totals.off_seconds}s off)</p>`;
    el("legend").innerHTML = legendHtml(["time on", "time off"]);
    el("badge").hidden = totals.on_seconds > 0;
    el("title").textContent = VIEWS.find((v) => v.kind === this.state.view)?.title ?? "";
  }

  showError(message: string): void {
    const banner = el("error");
    banner.hidden = false;
    el("error-text").textContent = message;
  }
}

new App().start();
