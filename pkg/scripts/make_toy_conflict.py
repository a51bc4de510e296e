"""Write the bundled toy conflict-event CSV (deterministic, seed 7)."""

import argparse
import csv
import datetime as dt
import random
from pathlib import Path

COUNTRIES = {
    "Burkina Faso": ["Sahel", "Est", "Boucle du Mouhoun", "Centre-Nord"],
    "Mali": ["Mopti", "Gao", "Timbuktu", "Segou"],
    "Niger": ["Tillaberi", "Diffa", "Tahoua"],
    "Nigeria": ["Borno", "Zamfara", "Kaduna"],
}
COUNTRY_WEIGHTS = [0.36, 0.3, 0.18, 0.16]
EVENT_TYPES = {
    "Battles": ["Armed clash", "Attack", "Government regains territory"],
    "Violence against civilians": ["Attack", "Abduction/forced disappearance"],
    "Explosions/Remote violence": ["Remote explosive/landmine/IED", "Air/drone strike"],
    "Protests": ["Peaceful protest"],
    "Riots": ["Violent demonstration", "Mob violence"],
}
TYPE_WEIGHTS = [0.34, 0.3, 0.16, 0.12, 0.08]
ARMED = {
    "Burkina Faso": ["JNIM", "Islamic State Sahel", "Military Forces of Burkina Faso", "VDP militia"],
    "Mali": ["JNIM", "Islamic State Sahel", "Military Forces of Mali", "Wagner Group"],
    "Niger": ["Islamic State Sahel", "JNIM", "Military Forces of Niger"],
    "Nigeria": ["ISWAP", "Boko Haram", "Military Forces of Nigeria", "Bandit militia"],
}


def rows(n: int, seed: int):
    rng = random.Random(seed)
    start = dt.date(2021, 1, 1)
    for i in range(1, n + 1):
        country = rng.choices(list(COUNTRIES), COUNTRY_WEIGHTS)[0]
        region = rng.choice(COUNTRIES[country])
        etype = rng.choices(list(EVENT_TYPES), TYPE_WEIGHTS)[0]
        sub = rng.choice(EVENT_TYPES[etype])
        date = start + dt.timedelta(days=rng.randrange(4 * 365))
        if etype in ("Protests", "Riots"):
            actor1, actor2 = ("Protesters" if etype == "Protests" else "Rioters"), ""
            fatalities = 0 if etype == "Protests" else rng.choice([0, 0, 1, 2])
        else:
            actor1 = rng.choice(ARMED[country])
            actor2 = "Civilians" if etype == "Violence against civilians" else rng.choice(
                [a for a in ARMED[country] if a != actor1])
            fatalities = int(rng.expovariate(1 / 9)) if etype != "Explosions/Remote violence" else rng.randrange(0, 15)
        yield {
            "event_id": f"SAH{i:04d}", "event_date": date.isoformat(), "year": date.year,
            "country": country, "region": region, "event_type": etype, "sub_event_type": sub,
            "actor1": actor1, "actor2": actor2, "fatalities": fatalities,
        }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).parents[1] / "fixtures/golden/toy_conflict.csv"))
    ap.add_argument("--rows", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    data = list(rows(args.rows, args.seed))
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(data[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(data)
    print(f"wrote {len(data)} rows to {args.out}")


if __name__ == "__main__":
    main()
