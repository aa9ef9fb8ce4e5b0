"""Regenerate the bundled sample CSVs under src/ffomaml/harness/data/.

The first row of each JD table carries the documented sample values; the rest
is seeded synthetic traffic with a constant-elasticity promo response.
"""

import argparse
import datetime as dt
from pathlib import Path

import numpy as np

from ffomaml.harness.ingest import (
    DATA_DIR, ExperimentRow, OrderRow, ProductRow, SaleRow, ShelfRow, SkuRow, UserRow, format_table,
)

START = dt.date(2018, 3, 1)


def _hex(rng, n=10):
    return "".join(rng.choice(list("0123456789abcdef"), size=n))


def jd_tables(rng, n_skus=8, n_days=31, regions=(3, 12, 29)):
    skus = [SkuRow("b4822497a5", 1, "c840ce7809", 3, 60, "2018-03-01", "2018-03-01"),
            SkuRow("443fd601f0", 1, "c840ce7809", 3, 45, "2018-03-01", "2018-03-31")]
    while len(skus) < n_skus:
        cat = int(rng.choice([3, 5, 8]))
        skus.append(SkuRow(_hex(rng), int(rng.integers(1, 3)), _hex(rng), cat, int(rng.integers(10, 90)),
                           "2018-03-01", "2018-03-31"))
    users = [UserRow("000000f736", 10, "2017-07", 0, "F", "26-35", "M", 3, 2, 1),
             UserRow("3cde601074", 2, "2016-11", 1, "M", "36-45", "S", 2, 3, 2)]
    for _ in range(18):
        users.append(UserRow(_hex(rng), int(rng.integers(0, 11)), "2017-0%d" % rng.integers(1, 10),
                             int(rng.integers(0, 2)), str(rng.choice(["F", "M"])), "26-35",
                             str(rng.choice(["M", "S"])), int(rng.integers(1, 5)),
                             int(rng.integers(1, 6)), int(rng.integers(1, 6))))

    orders = [OrderRow("3b76bfcd3b", "3cde601074", "443fd601f0", "2018-03-01", "2018-03-01 11:10:40.0",
                       1, 1, 2, 99.9, 53.9, 5.0, 41.0, 0.0, 0.0, 0, 29, 29)]
    for sku in skus[1:]:
        list_price = 99.9 if sku.sku_ID == "443fd601f0" else float(np.round(rng.uniform(20, 200), 1))
        elasticity = rng.uniform(1.0, 2.5)
        for region in regions:
            base = rng.uniform(1.0, 4.0)
            for day in range(n_days):
                date = (START + dt.timedelta(days=day)).isoformat()
                for promo in (False, True):
                    if promo and rng.random() < 0.25:
                        continue
                    discount = float(np.round(list_price * rng.uniform(0.1, 0.5), 1)) if promo else 0.0
                    final = float(np.round(list_price - discount, 1))
                    mean = base * (final / list_price) ** (-elasticity)
                    qty = int(rng.poisson(mean))
                    if qty < 1:
                        continue
                    user = users[int(rng.integers(len(users)))].user_ID
                    time = f"{date} {rng.integers(0, 24):02d}:{rng.integers(0, 60):02d}:{rng.integers(0, 60):02d}.0"
                    orders.append(OrderRow(_hex(rng), user, sku.sku_ID, date, time, qty, sku.type, 2,
                                           list_price, final, discount, 0.0, 0.0, 0.0, 0, region, region))
    return skus, users, orders


def vending_tables(rng, n_days=40, base_days=20):
    categories = ["drink", "snack", "dairy"]
    products = [ProductRow(f"P{i:03d}", categories[i % 3], "type%d" % (i % 2), "sub%d" % i, i % 4 != 3)
                for i in range(6)]
    shelves = [ShelfRow(area, f"S{j:03d}", int(rng.integers(0, 2)), int(rng.integers(0, 2)),
                        float(np.round(rng.uniform(0.2, 0.9), 3)), str(rng.choice(["A", "B", "C"])))
               for j, area in enumerate(["north", "north", "south", "east"])]
    scenes = {"S000": "office", "S001": "school", "S002": "office", "S003": "factory"}
    experiments, sales = [], []
    for p in products:
        base_price = float(np.round(rng.uniform(2, 8), 1))
        for sh in shelves:
            ab = float(np.round(base_price * rng.uniform(0.7, 1.2), 1))
            experiments.append(ExperimentRow(sh.business_area, sh.shelf_code, p.product_code,
                                             scenes[sh.shelf_code], "sub" + scenes[sh.shelf_code],
                                             p.second_type_name, p.sub_type_name, int(ab != base_price),
                                             base_price, ab, 0.0, int(ab < 0.95 * base_price)))
            level = rng.uniform(0.5, 3.0)
            for day in range(n_days):
                price = base_price if day < base_days else ab
                qty = int(rng.poisson(level * (price / base_price) ** -1.5))
                if qty == 0:
                    continue
                date = (START + dt.timedelta(days=day)).isoformat()
                sales.append(SaleRow(sh.business_area, sh.shelf_code, _hex(rng), p.product_code, _hex(rng),
                                     date, qty, price, float(np.round(qty * price, 2)), p.type_name))
    return sales, experiments, products, shelves


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    ap.add_argument("--seed", type=int, default=2018)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    skus, users, orders = jd_tables(rng)
    sales, experiments, products, shelves = vending_tables(rng)
    for name, rows, kind in [("jd_sku.csv", skus, SkuRow), ("jd_users.csv", users, UserRow),
                             ("jd_orders.csv", orders, OrderRow),
                             ("vending_sale_order.csv", sales, SaleRow),
                             ("experiment_detail_product.csv", experiments, ExperimentRow),
                             ("product_detail.csv", products, ProductRow),
                             ("shelf_detail.csv", shelves, ShelfRow)]:
        (args.out / name).write_text(format_table(rows, kind), encoding="utf-8")
        print(f"{name}: {len(rows)} rows")


if __name__ == "__main__":
    main()
