import { describe, expect, it } from "vitest";

import {
  endpointOf,
  queryString,
  requestPath,
  useCaseOf,
  validate,
  type ViewState,
} from "../src/api.js";

function state(overrides: Partial<ViewState> = {}): ViewState {
  return {
    view: "traffic_series",
    dateFrom: "2017-03-01",
    dateTo: "2017-03-02",
    hourFrom: 8,
    hourTo: 18,
    sensors: ["S01", "S02"],
    classes: ["carv", "busv"],
    distribution: "total",
    bucket: "hour",
    live: true,
    ...overrides,
  };
}

describe("canonical query-string serialization, one case per view", () => {
  it("traffic_series", () => {
    expect(requestPath(state())).toBe(
      "/api/traffic/series?from=2017-03-01&to=2017-03-02&hour_from=8&hour_to=18" +
        "&sensors=S01,S02&classes=carv,busv&distribution=total&group_by=time_bucket&bucket=hour",
    );
  });

  it("traffic_compare_locations", () => {
    expect(requestPath(state({ view: "traffic_compare_locations", distribution: "average_per_minute" }))).toBe(
      "/api/traffic/series?from=2017-03-01&to=2017-03-02&hour_from=8&hour_to=18" +
        "&sensors=S01,S02&classes=carv,busv&distribution=average_per_minute&group_by=sensor&bucket=hour",
    );
  });

  it("traffic_compare_dates", () => {
    expect(requestPath(state({ view: "traffic_compare_dates", sensors: ["S01"] }))).toBe(
      "/api/traffic/series?from=2017-03-01&to=2017-03-02&hour_from=8&hour_to=18" +
        "&sensors=S01&classes=carv,busv&distribution=total&group_by=date&bucket=hour",
    );
  });

  it("energy_compare_locations", () => {
    expect(requestPath(state({ view: "energy_compare_locations", sensors: ["L01", "L02"] }))).toBe(
      "/api/lighting/energy?from=2017-03-01&to=2017-03-02&hour_from=8&hour_to=18" +
        "&sensors=L01,L02&group_by=sensor&bucket=hour",
    );
  });

  it("energy_compare_dates", () => {
    expect(requestPath(state({ view: "energy_compare_dates", sensors: ["L01"], bucket: "day" }))).toBe(
      "/api/lighting/energy?from=2017-03-01&to=2017-03-02&hour_from=8&hour_to=18" +
        "&sensors=L01&group_by=date&bucket=day",
    );
  });

  it("energy_total", () => {
    expect(
      requestPath(state({ view: "energy_total", sensors: ["L01"], dateFrom: "2017-03-01", dateTo: "2017-03-01" })),
    ).toBe("/api/lighting/total?sensor=L01&date=2017-03-01&hour_from=8&hour_to=18");
  });
});

describe("serialization details", () => {
  it("omits empty sensor/class selections (server defaults apply)", () => {
    expect(queryString(state({ sensors: [], classes: [] }))).toBe(
      "from=2017-03-01&to=2017-03-02&hour_from=8&hour_to=18&distribution=total&group_by=time_bucket&bucket=hour",
    );
  });

  it("never sends classes or distribution on lighting views", () => {
    const qs = queryString(state({ view: "energy_compare_locations", sensors: ["L01"] }));
    expect(qs).not.toContain("classes");
    expect(qs).not.toContain("distribution");
  });

  it("percent-encodes sensor ids", () => {
    expect(queryString(state({ sensors: ["a b"] }))).toContain("sensors=a%20b");
  });

  it("is deterministic", () => {
    expect(queryString(state())).toBe(queryString(state()));
  });

  it("maps views to endpoints and use cases", () => {
    expect(endpointOf("traffic_series")).toBe("/api/traffic/series");
    expect(endpointOf("energy_compare_dates")).toBe("/api/lighting/energy");
    expect(endpointOf("energy_total")).toBe("/api/lighting/total");
    expect(useCaseOf("traffic_compare_dates")).toBe("traffic");
    expect(useCaseOf("energy_total")).toBe("lighting");
  });
});

describe("client-side validation mirrors server rules", () => {
  it("accepts a valid state", () => {
    expect(validate(state())).toBeNull();
  });

  it("rejects reversed ranges", () => {
    expect(validate(state({ dateFrom: "2017-03-05" }))).toMatch(/date range/);
    expect(validate(state({ hourFrom: 20 }))).toMatch(/hour range/);
  });

  it("rejects multi-sensor date comparisons", () => {
    expect(validate(state({ view: "traffic_compare_dates" }))).toMatch(/one location/);
  });

  it("rejects minute buckets for cross-date location comparisons", () => {
    expect(validate(state({ view: "traffic_compare_locations", bucket: "minute" }))).toMatch(/bucket/);
    expect(
      validate(state({ view: "traffic_compare_locations", bucket: "minute", dateTo: "2017-03-01" })),
    ).toBeNull();
  });

  it("rejects energy totals spanning dates or sensors", () => {
    expect(validate(state({ view: "energy_total", sensors: ["L01", "L02"] }))).toMatch(/one location/);
    expect(
      validate(state({ view: "energy_total", sensors: ["L01"] })),
    ).toMatch(/single date/);
  });
});
