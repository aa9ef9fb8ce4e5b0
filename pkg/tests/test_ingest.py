import shutil
import string

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffomaml.errors import EmptyTable, ParseError, SchemaMismatch
from ffomaml.harness.ingest import (
    OrderRow, ProductRow, SaleRow, ShelfRow, SkuRow, UserRow, columns, format_table, ingest_jd,
    ingest_vending, parse_table, read_table, sample_paths,
)

JD = sample_paths("jd")
VENDING = sample_paths("vending")


def test_sample_order_values():
    row = read_table(JD["orders"], OrderRow)[0]
    assert row.final_unit_price == 53.9 and row.original_unit_price == 99.9
    assert row.quantity == 1 and isinstance(row.quantity, int)
    assert row.order_time == "2018-03-01 11:10:40.0" and row.is_promo


def test_sample_sku_and_user_values():
    sku = read_table(JD["sku"], SkuRow)[0]
    assert sku.sku_ID == "b4822497a5" and sku.type == 1
    user = read_table(JD["users"], UserRow)[0]
    assert user.user_ID == "000000f736" and user.user_level == 10


def test_vending_types():
    products = read_table(VENDING["product"], ProductRow)
    assert all(isinstance(p.is_common_product, bool) for p in products)
    assert products[0].is_common_product is True
    sale = read_table(VENDING["sales"], SaleRow)[0]
    assert isinstance(sale.quantity_act, int)


def _orders_with_bad_date(row_number):
    lines = JD["orders"].read_text().splitlines()
    fields = lines[row_number].split(",")
    fields[3] = "2018/03/07"
    lines[row_number] = ",".join(fields)
    return "\n".join(lines) + "\n"


def test_malformed_date_is_located():
    with pytest.raises(ParseError) as info:
        parse_table(_orders_with_bad_date(7), OrderRow, "orders")
    assert (info.value.row, info.value.column, info.value.table) == (7, "order_date", "orders")


def test_malformed_number_is_located():
    text = "product_code,type_name,second_type_name,sub_type_name,is_common_product\nP1,a,b,c,yes\n"
    with pytest.raises(ParseError) as info:
        parse_table(text, ProductRow)
    assert (info.value.row, info.value.column) == (1, "is_common_product")


def test_order_invariants_checked():
    header = ",".join(columns(OrderRow))
    base = "o,u,s,2018-03-01,t,{q},1,2,10.0,{f},0.0,0.0,0.0,0.0,0,1,1"
    with pytest.raises(ParseError, match="quantity"):
        parse_table(f"{header}\n{base.format(q=0, f=5.0)}\n", OrderRow)
    with pytest.raises(ParseError, match="final"):
        parse_table(f"{header}\n{base.format(q=1, f=12.0)}\n", OrderRow)


def test_missing_grade_column(tmp_path):
    lines = VENDING["shelf"].read_text().splitlines()
    cut = [",".join(l.split(",")[:-1]) for l in lines]
    with pytest.raises(SchemaMismatch) as info:
        parse_table("\n".join(cut) + "\n", ShelfRow, "shelf")
    assert info.value.missing == ["grade"] and "grade" in str(info.value)


def test_empty_table():
    with pytest.raises(EmptyTable):
        parse_table(",".join(columns(SkuRow)) + "\n", SkuRow)


def test_short_row():
    with pytest.raises(ParseError, match="shorter"):
        parse_table(",".join(columns(SkuRow)) + "\nabc,1\n", SkuRow)


def test_bundled_files_round_trip():
    for kind, path in [(SkuRow, JD["sku"]), (OrderRow, JD["orders"]), (SaleRow, VENDING["sales"]),
                       (ShelfRow, VENDING["shelf"])]:
        rows = read_table(path, kind)
        assert parse_table(format_table(rows, kind), kind) == rows


text_field = st.text(alphabet=string.ascii_letters + string.digits + ',"- ', max_size=12).map(str.strip)
money = st.floats(0, 1e6, allow_nan=False)


@st.composite
def order_rows(draw):
    original = draw(money)
    return OrderRow(
        draw(text_field), draw(text_field), draw(text_field), draw(st.dates()).isoformat(), draw(text_field),
        draw(st.integers(1, 10**6)), draw(st.integers(0, 3)), draw(st.integers(-5, 5)),
        original, draw(st.floats(0, 1)) * original, draw(money), draw(money), draw(money),
        draw(st.floats(-1e3, 1e3)), draw(st.integers(0, 1)), draw(st.integers(0, 99)), draw(st.integers(0, 99)))


@settings(max_examples=100)
@given(rows=st.lists(order_rows(), min_size=1, max_size=5))
def test_parse_format_fixed_point_orders(rows):
    text = format_table(rows, OrderRow)
    parsed = parse_table(text, OrderRow)
    assert parsed == rows
    assert format_table(parsed, OrderRow) == text


@settings(max_examples=100)
@given(rows=st.lists(st.builds(SkuRow, text_field, st.integers(0, 9), text_field,
                               st.none() | st.integers(0, 100), st.none() | st.integers(0, 100),
                               st.dates().map(str), st.dates().map(str)), min_size=1, max_size=5))
def test_parse_format_fixed_point_skus(rows):
    assert parse_table(format_table(rows, SkuRow), SkuRow) == rows


def test_ingest_jd_structure():
    uni = ingest_jd(JD)
    assert len(uni) == 21 and uni.feature_dim == 9
    for t in uni.tasks:
        assert t.support and t.query
        assert {o.x.flatten().size for o in t.samples} == {uni.feature_dim}
        assert all(o.y >= 1 for o in t.samples)
    ids = [t.id for t in uni.tasks]
    assert len(set(ids)) == len(ids)
    assert all(np.all(np.isfinite(p.sales)) and np.all(np.isfinite(p.prices)) for p in uni.products.values())


def test_ingest_jd_category_selector():
    by_attr1 = ingest_jd(JD, category_column="attribute1")
    by_type = ingest_jd(JD, category_column="type")
    assert {t.hierarchy_label for t in by_type.tasks} <= {"1", "2"}
    assert len(by_attr1) == len(by_type)
    with pytest.raises(ValueError):
        ingest_jd(JD, category_column="colour")


def test_ingest_jd_price_scaling():
    raw = ingest_jd(JD, scale_prices=False)
    scaled = ingest_jd(JD)
    assert max(o.x.hist_price for t in raw.tasks for o in t.samples) > 20
    assert max(o.x.hist_price for t in scaled.tasks for o in t.samples) < 5


def test_ingest_vending_structure():
    uni = ingest_vending(VENDING)
    assert len(uni) == 24 and uni.feature_dim == 12
    for t in uni.tasks:
        assert len(t.query) == 10 and t.support
        assert all(o.y >= 0 for o in t.samples)
        assert all(o.x.hist_demand >= 0 for o in t.samples)


def test_ingest_reports_bad_file(tmp_path):
    paths = dict(JD)
    bad = tmp_path / "orders.csv"
    bad.write_text(_orders_with_bad_date(3))
    paths["orders"] = bad
    with pytest.raises(ParseError) as info:
        ingest_jd(paths)
    assert info.value.row == 3 and info.value.table == "orders.csv"


def test_ingest_vending_missing_column(tmp_path):
    paths = dict(VENDING)
    shelf = tmp_path / "shelf.csv"
    shutil.copy(VENDING["shelf"], shelf)
    shelf.write_text(shelf.read_text().replace("grade", "rank"))
    paths["shelf"] = shelf
    with pytest.raises(SchemaMismatch, match="grade"):
        ingest_vending(paths)
