import type { ApiRecord, RecordPage, SearchResponse } from "./types";

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  try {
    const body = (await resp.json()) as { error?: { code?: string; message?: string } };
    return new ApiError(
      resp.status,
      body.error?.code ?? "Internal",
      body.error?.message ?? resp.statusText,
    );
  } catch {
    return new ApiError(resp.status, "Internal", resp.statusText);
  }
}

/** Thin, typed client for the darkmine REST API. Holds no state beyond the base URL. */
export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  listIndexes(): Promise<{ indexes: string[] }> {
    return this.get("/indexes");
  }

  records(index: string, page: number, size: number): Promise<RecordPage> {
    const params = new URLSearchParams({
      index,
      page: String(page),
      size: String(size),
    });
    return this.get(`/records?${params}`);
  }

  search(
    index: string,
    query: string,
    options: { field?: string; productClass?: string; flagged?: boolean } = {},
  ): Promise<SearchResponse> {
    const params = new URLSearchParams({ index, q: query });
    if (options.field) params.set("field", options.field);
    if (options.productClass) params.set("class", options.productClass);
    if (options.flagged !== undefined) params.set("flagged", String(options.flagged));
    return this.get(`/search?${params}`);
  }

  markViewed(index: string, docId: string): Promise<ApiRecord> {
    return this.post(`/records/${docId}/viewed`, { index });
  }

  setFlag(index: string, docId: string, value: boolean | null): Promise<ApiRecord> {
    return this.post(`/records/${docId}/flag`, { index, value });
  }

  addComment(index: string, docId: string, text: string): Promise<ApiRecord> {
    return this.post(`/records/${docId}/comments`, { index, text });
  }
}
