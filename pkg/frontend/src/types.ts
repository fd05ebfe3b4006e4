// Wire shapes returned by the darkmine REST API. Scraped fields arrive as
// strings ("None" when the source page lacked them); analyst fields are
// null until an analyst touches the record.

export interface ApiRecord {
  doc_id: string;
  title: string;
  seller: string;
  category: string;
  creationDate: string;
  url: string;
  views: string;
  purchases: string;
  expire: string;
  productClass: string;
  originCountry: string;
  shippingDestinations: string;
  quantity: string;
  payment: string;
  price: string;
  analyst_hasViewed: boolean | null;
  analyst_viewDate: string | null;
  analyst_flagged: boolean | null;
  analyst_notes: string | null;
  analyst_closedDate: string | null;
  analyst_dateCollected: string;
}

export interface RecordPage {
  index: string;
  page: number;
  size: number;
  total: number;
  records: ApiRecord[];
}

export interface SearchHit {
  doc_id: string;
  score: number;
  matched_fields: string[];
  record: ApiRecord;
}

export interface SearchResponse {
  index: string;
  query: string;
  hits: SearchHit[];
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}
