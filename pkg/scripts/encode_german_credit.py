"""Encode the categorical German credit table as 24 numeric attributes + label.

Usage::

    python scripts/encode_german_credit.py germancredit.csv data/german_credit_numeric.txt

The input is the 21-column labelled CSV rendition of the UCI Statlog German
credit data (as shipped, for example, inside the ``scorecardpy`` sdist).  The
output is whitespace-separated, one applicant per line: 24 integer attributes
followed by the label (1 = good, 2 = bad), the layout expected by
``gris.targets.load_german_credit``.

Ordered categoricals are coded by their rank in the UCI attribute codes
(A11 -> 1, ...); nominal ones become 0/1 indicators with the most common
level dropped.
"""

import csv
import sys

ORDINAL = {
    "status_of_existing_checking_account": [
        "... < 0 DM", "0 <= ... < 200 DM",
        "... >= 200 DM / salary assignments for at least 1 year", "no checking account"],
    "credit_history": [
        "no credits taken/ all credits paid back duly", "all credits at this bank paid back duly",
        "existing credits paid back duly till now", "delay in paying off in the past",
        "critical account/ other credits existing (not at this bank)"],
    "savings_account_and_bonds": [
        "... < 100 DM", "100 <= ... < 500 DM", "500 <= ... < 1000 DM", "... >= 1000 DM",
        "unknown/ no savings account"],
    "present_employment_since": [
        "unemployed", "... < 1 year", "1 <= ... < 4 years", "4 <= ... < 7 years", "... >= 7 years"],
    "property": [
        "real estate", "building society savings agreement/ life insurance",
        "car or other, not in attribute Savings account/bonds", "unknown / no property"],
    "job": [
        "unemployed/ unskilled - non-resident", "unskilled - resident",
        "skilled employee / official",
        "management/ self-employed/ highly qualified employee/ officer"],
}
# code offset: credit history starts at 0 (A30), the others at 1
ORDINAL_BASE = {"credit_history": 0}

NUMERIC = [
    "duration_in_month", "credit_amount", "installment_rate_in_percentage_of_disposable_income",
    "present_residence_since", "age_in_years", "number_of_existing_credits_at_this_bank",
    "number_of_people_being_liable_to_provide_maintenance_for",
]

INDICATORS = [
    ("personal_status_and_sex", "female : divorced/separated/married"),
    ("other_debtors_or_guarantors", "co-applicant"),
    ("other_debtors_or_guarantors", "guarantor"),
    ("other_installment_plans", "bank"),
    ("other_installment_plans", "stores"),
    ("housing", "rent"),
    ("housing", "own"),
    ("telephone", "yes, registered under the customers name"),
    ("foreign_worker", "yes"),
    ("purpose", "car (new)"),
    ("purpose", "car (used)"),
]

LABELS = {"good": 1, "bad": 2}


def encode_row(row):
    out = []
    for col in ("status_of_existing_checking_account", "duration_in_month", "credit_history"):
        if col in ORDINAL:
            out.append(ORDINAL[col].index(row[col]) + ORDINAL_BASE.get(col, 1))
        else:
            out.append(int(row[col]))
    for col in ("savings_account_and_bonds", "present_employment_since", "property", "job"):
        out.append(ORDINAL[col].index(row[col]) + 1)
    out.extend(int(row[c]) for c in NUMERIC if c != "duration_in_month")
    out.extend(int(row[c] == level) for c, level in INDICATORS)
    out.append(LABELS[row["creditability"]])
    return out


def main(src, dst):
    with open(src, newline="") as fh:
        rows = [encode_row(r) for r in csv.DictReader(fh)]
    assert all(len(r) == 25 for r in rows)
    with open(dst, "w") as fh:
        for r in rows:
            fh.write(" ".join(f"{v:4d}" for v in r) + "\n")
    print(f"wrote {len(rows)} rows to {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
