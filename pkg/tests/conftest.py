from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

from shoplens.ingest import CleanedTransaction, InvoiceLine

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "shoplens" / "data"


@pytest.fixture
def fixture_csv() -> Path:
    return DATA_DIR / "fixture_invoices.csv"


@pytest.fixture
def fixture_config_path() -> Path:
    return DATA_DIR / "fixture_config.json"


def make_line(invoice_id="1001", stock_code="SKU1", quantity=1,
              date="2011-06-01 10:00", unit_price=2.0, customer_id="C1",
              description="THING", country="United Kingdom") -> InvoiceLine:
    return InvoiceLine(invoice_id=invoice_id, stock_code=stock_code,
                       description=description, quantity=quantity,
                       invoice_date=datetime.fromisoformat(date),
                       unit_price=unit_price, customer_id=customer_id,
                       country=country)


def make_txn(customer_id="C1", stock_code="SKU1", invoice_id="1001",
             date="2011-06-01 10:00", spend=2.0, quantity=1) -> CleanedTransaction:
    return CleanedTransaction(customer_id=customer_id, stock_code=stock_code,
                              invoice_id=invoice_id,
                              invoice_date=datetime.fromisoformat(date),
                              spend=spend, quantity=quantity)


def blobs_with_noise(seed, n_blob=50, n_noise=20, dim=5, sep=8.0, sigma=0.25,
                     pad=8.0, keepout=2.5):
    """Two tight Gaussian blobs plus sparse uniform noise.

    Noise is drawn uniformly over the padded box but re-drawn if it lands
    inside a blob's keepout ball (a point inside a blob is not noise).
    Returns (points, truth) with truth -1 marking the noise draws.
    """
    rng = np.random.default_rng(seed)
    c1 = np.zeros(dim)
    c2 = np.full(dim, sep / np.sqrt(dim))
    a = c1 + rng.normal(0.0, sigma, size=(n_blob, dim))
    b = c2 + rng.normal(0.0, sigma, size=(n_blob, dim))
    noise = []
    while len(noise) < n_noise:
        cand = rng.uniform(-pad, sep / np.sqrt(dim) + pad, size=dim)
        if min(np.linalg.norm(cand - c1), np.linalg.norm(cand - c2)) > keepout:
            noise.append(cand)
    points = np.vstack([a, b, np.array(noise)])
    truth = np.array([0] * n_blob + [1] * n_blob + [-1] * n_noise)
    return points, truth
