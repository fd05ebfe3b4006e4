import type { ApiRecord } from "../src/types";

export function fakeRecord(overrides: Partial<ApiRecord> = {}): ApiRecord {
  return {
    doc_id: "doc0000000000001",
    title: "Fresh Hacked Accounts Pack",
    seller: "DrunkDragon",
    category: "Fraud Accounts",
    creationDate: "None",
    url: "http://market.test/listing/x",
    views: "None",
    purchases: "None",
    expire: "None",
    productClass: "Digital",
    originCountry: "Worldwide",
    shippingDestinations: "Worldwide",
    quantity: "Unlimited",
    payment: "Escrow",
    price: "5.00 USD",
    analyst_hasViewed: null,
    analyst_viewDate: null,
    analyst_flagged: null,
    analyst_notes: null,
    analyst_closedDate: null,
    analyst_dateCollected: "2020-07-03 16:56:42",
    ...overrides,
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export async function flushTasks(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
  await new Promise((resolve) => setTimeout(resolve, 0));
}
