"""CSV ingestion for the JD.com and vending-machine table layouts.

Every table is parsed against a typed schema. Row numbers in errors count data
rows from 1 (the header is not counted).
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
from collections import defaultdict
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import EmptyTable, ParseError, SchemaMismatch
from ..task_model import FeatureTuple, Observation, ProductHistory, TaskDataset, TaskId, TaskUniverse

MISSING = "-"  # placeholder for optional integer attributes


def _date(text: str) -> str:
    _dt.date.fromisoformat(text)
    if len(text) != 10:
        raise ValueError("expected yyyy-mm-dd")
    return text


def _opt_int(text: str):
    return None if text in ("", MISSING) else int(text)


def _bool01(text: str) -> bool:
    if text not in ("0", "1"):
        raise ValueError("expected 0 or 1")
    return text == "1"


_PARSE = {str: str, int: int, float: float, "date": _date, "opt_int": _opt_int, "bool": _bool01}


def _format(value, kind) -> str:
    if kind == "opt_int":
        return MISSING if value is None else str(value)
    if kind == "bool":
        return "1" if value else "0"
    if kind is float:
        return repr(float(value))
    return str(value)


# -- JD.com tables ----------------------------------------------------------------

@dataclass(frozen=True)
class SkuRow:
    sku_ID: str
    type: int
    brand_ID: str
    attribute1: Optional[int]
    attribute2: Optional[int]
    activate_date: str
    deactivate_date: str

    SCHEMA = {"type": int, "attribute1": "opt_int", "attribute2": "opt_int"}


@dataclass(frozen=True)
class UserRow:
    user_ID: str
    user_level: int
    first_order_month: str
    plus: int
    gender: str
    age: str
    marital_status: str
    education: int
    purchase_power: int
    city_level: int

    SCHEMA = {"user_level": int, "plus": int, "education": int,
              "purchase_power": int, "city_level": int}


@dataclass(frozen=True)
class OrderRow:
    order_ID: str
    user_ID: str
    sku_ID: str
    order_date: str
    order_time: str
    quantity: int
    type: int
    promise: int
    original_unit_price: float
    final_unit_price: float
    direct_discount_per_unit: float
    quantity_discount_per_unit: float
    bundle_discount_per_unit: float
    coupon_discount_per_unit: float
    gift_item: int
    dc_ori: int
    dc_des: int

    SCHEMA = {"order_date": "date", "quantity": int, "type": int, "promise": int,
              "original_unit_price": float, "final_unit_price": float,
              "direct_discount_per_unit": float, "quantity_discount_per_unit": float,
              "bundle_discount_per_unit": float, "coupon_discount_per_unit": float,
              "gift_item": int, "dc_ori": int, "dc_des": int}

    def check(self):
        if self.quantity < 1:
            return "quantity", "quantity must be at least 1"
        discounts = (self.direct_discount_per_unit, self.quantity_discount_per_unit,
                     self.bundle_discount_per_unit, self.coupon_discount_per_unit)
        if min(discounts) >= 0 and self.final_unit_price > self.original_unit_price + 1e-9:
            return "final_unit_price", "final price exceeds original price"
        return None

    @property
    def is_promo(self) -> bool:
        return self.final_unit_price < self.original_unit_price - 1e-9


# -- vending-machine tables ----------------------------------------------------------

@dataclass(frozen=True)
class SaleRow:
    business_area: str
    shelf_code: str
    order_code: str
    product_code: str
    user_code: str
    pay_date: str
    quantity_act: int
    sale_price: float
    real_total_price: float
    product_type: str

    SCHEMA = {"pay_date": "date", "quantity_act": int, "sale_price": float,
              "real_total_price": float}


@dataclass(frozen=True)
class ExperimentRow:
    business_area: str
    shelf_code: str
    product_code: str
    mtype: str
    scene: str
    second_type_name: str
    sub_type_name: str
    if_exper: int
    sale_price: float
    ab_price: float
    cross_price: float
    lower_price95: int

    SCHEMA = {"if_exper": int, "sale_price": float, "ab_price": float,
              "cross_price": float, "lower_price95": int}


@dataclass(frozen=True)
class ProductRow:
    product_code: str
    type_name: str
    second_type_name: str
    sub_type_name: str
    is_common_product: bool

    SCHEMA = {"is_common_product": "bool"}


@dataclass(frozen=True)
class ShelfRow:
    business_area: str
    shelf_code: str
    is_low_sale: int
    can_fill_high_price: int
    old_user_rate: float
    grade: str

    SCHEMA = {"is_low_sale": int, "can_fill_high_price": int, "old_user_rate": float}


# -- generic table I/O ---------------------------------------------------------------

def columns(row_type) -> list:
    return [f.name for f in fields(row_type)]


def parse_table(text: str, row_type, table: str = "") -> list:
    """Parse CSV text into ``row_type`` instances."""
    table = table or row_type.__name__
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in columns(row_type) if c not in header]
    if missing:
        raise SchemaMismatch(table, missing)
    schema = row_type.SCHEMA
    rows = []
    for i, raw in enumerate(reader, start=1):
        values = {}
        for name in columns(row_type):
            kind = schema.get(name, str)
            text_value = raw[name]
            if text_value is None:
                raise ParseError(table, i, name, "row is shorter than the header")
            try:
                values[name] = _PARSE[kind](text_value.strip())
            except ValueError as exc:
                raise ParseError(table, i, name, str(exc)) from None
            if kind is float and not np.isfinite(values[name]):
                raise ParseError(table, i, name, "non-finite value")
        row = row_type(**values)
        problem = row.check() if hasattr(row, "check") else None
        if problem is not None:
            raise ParseError(table, i, *problem)
        rows.append(row)
    if not rows:
        raise EmptyTable(table)
    return rows


def format_table(rows, row_type) -> str:
    schema = row_type.SCHEMA
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns(row_type))
    for row in rows:
        writer.writerow([_format(v, schema.get(n, str)) for n, v in zip(columns(row_type), astuple(row))])
    return buf.getvalue()


def read_table(path, row_type) -> list:
    path = Path(path)
    return parse_table(path.read_text(encoding="utf-8"), row_type, path.name)


# -- aggregation into tasks ----------------------------------------------------------

def _one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def _day_index(dates) -> dict:
    days = sorted(set(dates))
    first = _dt.date.fromisoformat(days[0])
    last = _dt.date.fromisoformat(days[-1])
    span = (last - first).days + 1
    return {d: (_dt.date.fromisoformat(d) - first).days for d in days}, span


def _history(n_days, daily_qty: dict, daily_price: dict, fallback_price: float):
    sales = np.array([daily_qty.get(d, 0.0) for d in range(n_days)])
    prices = np.empty(n_days)
    last = fallback_price
    for d in range(n_days):
        last = daily_price.get(d, last)
        prices[d] = last
    return sales, prices


def _rescale(obs: Observation, scale: float) -> Observation:
    x = obs.x
    return Observation(FeatureTuple(x.s, x.v, x.hist_price / scale, x.hist_demand, x.query_price / scale), obs.y)


def _finish(tasks, feature_dim, products, min_support, min_query, scale_prices):
    keep = [t for t in tasks if len(t.support) >= min_support and len(t.query) >= min_query]
    if not keep:
        raise EmptyTable("no task has enough support and query observations")
    if scale_prices:
        # prices in units of the median regular price, so they sit on the same scale as the one-hots
        scale = float(np.median([t.samples[0].x.hist_price for t in keep]))
        keep = [TaskDataset(t.id, [_rescale(o, scale) for o in t.support],
                            [_rescale(o, scale) for o in t.query], t.hierarchy_label) for t in keep]
    return TaskUniverse(sorted(keep, key=lambda t: t.id), feature_dim, 0, products)


def ingest_jd(paths: dict, category_column: str = "attribute1", window_days: int = 15,
              min_support: int = 1, min_query: int = 1, scale_prices: bool = True) -> TaskUniverse:
    """Build promotion-demand tasks from the sku/users/orders tables.

    A task is one (sku, destination region) pair. Orders are aggregated into
    daily quantities per price regime (promo when the final price is below the
    list price). Each promo day is one observation with features
    (category one-hot, region one-hot, regular price, regular daily demand,
    promo price) and target the promo-day quantity. The last ``window_days``
    days form the query set and the ``window_days`` before them the support set.
    With ``scale_prices`` both prices are divided by the median regular price.
    """
    skus = read_table(paths["sku"], SkuRow)
    if "users" in paths:
        read_table(paths["users"], UserRow)
    orders = read_table(paths["orders"], OrderRow)
    if category_column not in columns(SkuRow):
        raise SchemaMismatch("sku", [category_column])

    sku_by_id = {s.sku_ID: s for s in skus}
    orders = [o for o in orders if o.sku_ID in sku_by_id]
    if not orders:
        raise EmptyTable("orders (no order references a known sku)")
    day_of, n_days = _day_index(o.order_date for o in orders)
    test_start = n_days - window_days
    train_start = max(0, test_start - window_days)

    category = {s.sku_ID: str(getattr(s, category_column)) for s in skus}
    cats = sorted(set(category[o.sku_ID] for o in orders))
    regions = sorted(set(o.dc_des for o in orders))
    sku_ids = sorted(set(o.sku_ID for o in orders))

    regular = defaultdict(lambda: [0.0, 0.0])      # (sku, region) -> [qty, qty*price]
    promo = defaultdict(lambda: [0.0, 0.0])        # (sku, region, day) -> [qty, qty*price]
    daily_qty = defaultdict(lambda: defaultdict(float))
    daily_rev = defaultdict(lambda: defaultdict(float))
    list_price = {}
    for o in orders:
        day = day_of[o.order_date]
        daily_qty[o.sku_ID][day] += o.quantity
        daily_rev[o.sku_ID][day] += o.quantity * o.final_unit_price
        list_price.setdefault(o.sku_ID, o.original_unit_price)
        if day < train_start:
            continue
        if o.is_promo:
            acc = promo[(o.sku_ID, o.dc_des, day)]
        elif day < test_start:
            acc = regular[(o.sku_ID, o.dc_des)]
        else:
            continue
        acc[0] += o.quantity
        acc[1] += o.quantity * o.final_unit_price

    n_train_days = test_start - train_start
    tasks = []
    by_task = defaultdict(list)
    for (sku, region, day), (qty, rev) in sorted(promo.items()):
        by_task[(sku, region)].append((day, qty, rev / qty))
    for (sku, region), days in by_task.items():
        if (sku, region) not in regular:
            continue
        reg_qty, reg_rev = regular[(sku, region)]
        p_reg = reg_rev / reg_qty
        y_reg = reg_qty / n_train_days
        s = _one_hot(cats.index(category[sku]), len(cats))
        v = _one_hot(regions.index(region), len(regions))
        support, query = [], []
        for day, qty, p in days:
            obs = Observation(FeatureTuple(s, v, p_reg, y_reg, p), qty)
            (query if day >= test_start else support).append(obs)
        tid = TaskId(sku_ids.index(sku), regions.index(region))
        tasks.append(TaskDataset(tid, support, query, category[sku]))

    products = {}
    for i, sku in enumerate(sku_ids):
        row = sku_by_id[sku]
        prices = {d: daily_rev[sku][d] / q for d, q in daily_qty[sku].items() if q > 0}
        sales, price_series = _history(n_days, daily_qty[sku], prices, list_price[sku])
        static = np.concatenate([_one_hot(cats.index(category[sku]), len(cats)),
                                 [float(row.type), float(row.attribute1 or 0), float(row.attribute2 or 0)]])
        products[i] = ProductHistory(row.brand_ID, static, sales, price_series)
    return _finish(tasks, len(cats) + len(regions) + 3, products, min_support, min_query, scale_prices)


def ingest_vending(paths: dict, base_days: int = 20, test_days: int = 10,
                   min_support: int = 1, min_query: int = 1, scale_prices: bool = True) -> TaskUniverse:
    """Build price-experiment tasks from the sales/experiment/product/shelf tables.

    A task is one (product_code, shelf_code) pair in the experiment table. The
    first ``base_days`` days run at the base price and give the regular demand;
    every later day is one observation at the adjusted price, with its daily
    quantity (zero when nothing sold) as target. The last ``test_days`` days
    form the query set. Features are (category one-hot, region and scene
    one-hots, base price, base daily demand, adjusted price), prices scaled as
    in ``ingest_jd``.
    """
    sales = read_table(paths["sales"], SaleRow)
    experiments = read_table(paths["experiment"], ExperimentRow)
    products_tbl = read_table(paths["product"], ProductRow)
    shelves = read_table(paths["shelf"], ShelfRow)

    category = {p.product_code: p.type_name for p in products_tbl}
    shelf_known = {s.shelf_code for s in shelves}
    experiments = [e for e in experiments if e.product_code in category and e.shelf_code in shelf_known]
    if not experiments:
        raise EmptyTable("experiment (no row matches a known product and shelf)")

    day_of, n_days = _day_index(s.pay_date for s in sales)
    if n_days <= base_days + test_days:
        raise EmptyTable(f"sales span {n_days} days, need more than {base_days + test_days}")
    test_start = n_days - test_days

    cats = sorted({category[e.product_code] for e in experiments})
    areas = sorted({e.business_area for e in experiments})
    scenes = sorted({e.mtype for e in experiments})
    product_ids = sorted({e.product_code for e in experiments})
    shelf_ids = sorted({e.shelf_code for e in experiments})

    qty = defaultdict(float)                      # (product, shelf, day)
    prod_qty = defaultdict(lambda: defaultdict(float))
    prod_rev = defaultdict(lambda: defaultdict(float))
    for s in sales:
        day = day_of[s.pay_date]
        qty[(s.product_code, s.shelf_code, day)] += s.quantity_act
        prod_qty[s.product_code][day] += s.quantity_act
        prod_rev[s.product_code][day] += s.real_total_price

    tasks = []
    seen = set()
    for e in sorted(experiments, key=lambda e: (e.product_code, e.shelf_code)):
        key = (e.product_code, e.shelf_code)
        if key in seen:
            continue
        seen.add(key)
        y_base = sum(qty.get((*key, d), 0.0) for d in range(base_days)) / base_days
        s = _one_hot(cats.index(category[e.product_code]), len(cats))
        v = np.concatenate([_one_hot(areas.index(e.business_area), len(areas)),
                            _one_hot(scenes.index(e.mtype), len(scenes))])
        support, query = [], []
        for d in range(base_days, n_days):
            obs = Observation(FeatureTuple(s, v, e.sale_price, y_base, e.ab_price), qty.get((*key, d), 0.0))
            (query if d >= test_start else support).append(obs)
        tid = TaskId(product_ids.index(e.product_code), shelf_ids.index(e.shelf_code))
        tasks.append(TaskDataset(tid, support, query, category[e.product_code]))

    base_price = {e.product_code: e.sale_price for e in experiments}
    products = {}
    for i, code in enumerate(product_ids):
        prices = {d: prod_rev[code][d] / q for d, q in prod_qty[code].items() if q > 0}
        series, price_series = _history(n_days, prod_qty[code], prices, base_price[code])
        static = _one_hot(cats.index(category[code]), len(cats))
        products[i] = ProductHistory(category[code], static, series, price_series)
    return _finish(tasks, len(cats) + len(areas) + len(scenes) + 3, products, min_support, min_query, scale_prices)


# -- bundled samples ---------------------------------------------------------------

DATA_DIR = Path(__file__).parent / "data"


def sample_paths(kind: str) -> dict:
    if kind == "jd":
        names = {"sku": "jd_sku.csv", "users": "jd_users.csv", "orders": "jd_orders.csv"}
    elif kind == "vending":
        names = {"sales": "vending_sale_order.csv", "experiment": "experiment_detail_product.csv",
                 "product": "product_detail.csv", "shelf": "shelf_detail.csv"}
    else:
        raise ValueError(f"unknown sample set {kind!r}")
    return {k: DATA_DIR / v for k, v in names.items()}
