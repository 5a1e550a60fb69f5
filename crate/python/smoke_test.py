"""Smoke test for the choicekit_py extension module.

Build the module first (see README), then run `python python/smoke_test.py`.
"""

import math
import pathlib

import choicekit_py as ck

ROOT = pathlib.Path(__file__).resolve().parent.parent
CAR = ROOT / "crates" / "core" / "tests" / "fixtures" / "car_choice_head.csv"


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok: {msg}")


terms = ck.parse_formula("(price|constant) + (income|item) + (1|item-full)")
check(terms == [("price", "constant"), ("income", "item"), ("intercept", "item-full")], "formula parses")

# Tiny hand-built dataset: 3 items, 4 records, one item-varying feature.
ds = ck.Dataset(
    item_index=[0, 2, 1, 2],
    user_index=[0, 1, 0, 1],
    observables={"item_size": [[1.0], [2.0], [3.0]]},
)
check(len(ds) == 4 and ds.num_items == 3 and ds.num_users == 2, repr(ds))

m = ck.ConditionalLogit("(item_size|constant) + (1|item)", ds)
check(m.num_params == 3, "three parameters")
m.theta = [0.5, -0.2, 0.1]
lp = m.log_prob(ds)
check(all(abs(sum(math.exp(v) for v in row) - 1.0) < 1e-12 for row in lp), "probabilities sum to one")
check(abs(m.neg_log_likelihood(ds) + sum(lp[r][c] for r, c in enumerate(ds.item_index))) < 1e-12, "nll matches log_prob")

# Simulated beta-only model, recovered by L-BFGS.
data, truth, formula = ck.simulate("m1", users=20, items=10, records=20000, user_dim=0, item_dim=3, seed=1)
clm = ck.ConditionalLogit(formula, data)
res = clm.fit(data, optimizer="lbfgs", se=True)
err = max(abs(a - b) for a, b in zip(res["theta"], truth))
check(res["converged"] and err < 0.1, f"m1 recovery, max error {err:.4f}")
beta = clm.get_coefficient("item_obs[constant]")
check(len(beta) == 3 and abs(beta[0] - res["theta"][0]) < 1e-15, "get_coefficient returns the fitted block")
check(all(r["std_err"] is not None for r in res["coefficients"]), "standard errors reported")

# Nested logit with one shared dissimilarity parameter.
nlm = ck.NestedLogit("", "(item_obs|constant)", data, nests=[[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]], shared_lambda=True)
check(nlm.num_params == 4 and nlm.lambdas == [1.0], "nested model at lambda = 1")
nlm.theta = res["theta"] + [0.0]
check(abs(nlm.neg_log_likelihood() - clm.neg_log_likelihood(data)) < 1e-8, "lambda = 1 matches conditional logit")
fit = nlm.fit(optimizer="lbfgs", epochs=200)
check(math.isfinite(fit["nll"]) and fit["nll"] <= res["nll"] + 1e-6, "nested fit does not worsen the likelihood")

if CAR.exists():
    car = ck.Dataset.from_long_csv(
        str(CAR), record="record_id", item="car", choice="purchase", user="consumer_id", session="session_id",
        columns={"user": ["gender", "income"], "item": ["speed"], "session": ["discount"], "itemsession": ["price"]},
    )
    check(car.num_items == 4 and not car.violations(), f"car fixture ingests: {car!r}")

print("smoke test passed")
