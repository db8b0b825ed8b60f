#!/usr/bin/env python3
"""Writes data/synthetic5/{train,test}.csv: five banking intents built from
templates and slot fillers. Output is a pure function of SEED."""

import csv
import pathlib
import random

SEED = 20240501
PER_CLASS = {"train": 40, "test": 40}

OPENERS = ["", "", "", "", "", "", "hi, ", "hello, ", "hey, ", "excuse me, ", "quick question: ", "please help, "]
CLOSERS = ["", "", "", "", "", "", "?", " please", " thanks", " asap", " today"]
# Context fragments shared by every class, so surface overlap alone does not
# identify the intent.
SHARED = ["", "", "", "", "", "", "", "", "", " on my account", " in the app", " this morning", " for my card", " with my money",
          " again", " from abroad"]

# Every template carries its intent's keywords; slots and shared fragments vary
# the rest of the utterance.
INTENTS = {
    "card_arrival": {
        "templates": [
            "when will my {card} arrive",
            "my {card} has not arrived yet",
            "is my {card} delivery late",
            "still waiting for my {card} to arrive",
            "has my {card} been delivered",
            "how long until my {card} arrives",
        ],
        "slots": {"card": ["new card", "card", "replacement card", "debit card", "physical card"]},
    },
    "exchange_rate": {
        "templates": [
            "what exchange rate do you use for {currency}",
            "what is the exchange rate to {currency}",
            "is the {currency} exchange rate fair",
            "why was my exchange rate for {currency} so bad",
            "show me the exchange rate for {currency}",
            "how is the {currency} exchange rate set",
        ],
        "slots": {"currency": ["euros", "dollars", "pounds", "yen", "swiss francs", "rupees"]},
    },
    "lost_or_stolen_card": {
        "templates": [
            "i lost my {card}, it was stolen {where}",
            "my {card} was stolen {where}",
            "i think my {card} got stolen {where}",
            "help, my {card} is lost or stolen",
            "report my stolen {card}",
            "block my lost {card}, it was stolen",
        ],
        "slots": {
            "card": ["card", "bank card", "debit card", "credit card"],
            "where": ["on the train", "at the bar", "yesterday", "in a taxi", "at the airport"],
        },
    },
    "top_up_failed": {
        "templates": [
            "my top up {verb}",
            "why did my top up {verb}",
            "the top up of {amount} {verb}",
            "top up with {source} {verb}",
            "my {source} top up {verb}",
            "tried to top up {amount} but it {verb}",
        ],
        "slots": {
            "verb": ["failed", "did not work", "was declined", "got rejected"],
            "amount": ["20 pounds", "50 euros", "100 dollars", "money"],
            "source": ["bank account", "apple pay", "google pay", "another card"],
        },
    },
    "transfer_fee_charged": {
        "templates": [
            "why was i charged a fee for my {transfer}",
            "there is a fee on my {transfer}",
            "you charged a {fee} fee for a {transfer}",
            "what is this fee on the {transfer}",
            "i paid a transfer fee on my {transfer}",
            "refund the {fee} fee on my {transfer}",
        ],
        "slots": {
            "transfer": ["transfer", "bank transfer", "international transfer", "sepa transfer"],
            "fee": ["2 euro", "5 pound", "small", "hidden"],
        },
    },
}


def render(rng, spec):
    text = rng.choice(spec["templates"])
    for slot, values in spec["slots"].items():
        while "{" + slot + "}" in text:
            text = text.replace("{" + slot + "}", rng.choice(values), 1)
    text = rng.choice(OPENERS) + text + rng.choice(SHARED) + rng.choice(CLOSERS)
    return text[0].upper() + text[1:]


def main():
    rng = random.Random(SEED)
    out_dir = pathlib.Path(__file__).resolve().parent.parent / "data" / "synthetic5"
    out_dir.mkdir(parents=True, exist_ok=True)
    seen = set()
    for split, count in PER_CLASS.items():
        rows = []
        for label, spec in INTENTS.items():
            made = 0
            while made < count:
                text = render(rng, spec)
                if text in seen:
                    continue
                seen.add(text)
                rows.append((text, label))
                made += 1
        rng.shuffle(rows)
        with open(out_dir / f"{split}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["text", "category"])
            writer.writerows(rows)


if __name__ == "__main__":
    main()
