#!/usr/bin/env python3
"""Builds the 200-record SQuAD-format fixture pair for the dataset tests.

Usage: make_squad_fixture.py FIXTURE_DIR
Writes squad_train.json (170 qas), squad_dev.json (30 qas), and
ner_dictionary.json. Record ids encode the intended pipeline outcome
(pass-r1 / pass-r2 / drop-none / drop-two / drop-ansent / drop-absent /
imposs), and this script verifies each record actually lands in its labeled
category under the documented rules before writing anything.
"""

import json
import os
import random
import re
import sys

# Entity surface forms for the dictionary tagger. Invented names so template
# prose can never collide with them.
DICT_SINGLE = [
    "Veldoria", "Quorath", "Brenholm", "Maravel", "Zephyria", "Ollantir",
    "Drevuna", "Fennwick", "Galtara", "Ishveld", "Jorvath", "Krellis",
    "Lumetra", "Norvessa", "Ostrind", "Prellock", "Sorvane", "Tarquill",
]
DICT_DOUBLE = [
    "Telmar Basin", "Kestrel Bay", "Ardent Spire", "Hollow Reach",
    "Cinder Vale", "Mirren Atoll", "Sable Cross", "Willow Garrison",
]
DICT_UNI = ["Røstvik", "Ängsholm", "Café Lumière"]
DICTIONARY = DICT_SINGLE + DICT_DOUBLE + DICT_UNI

# Article titles used by rule-1 records (appear verbatim in their questions).
TITLES_R1 = [
    "Harrowgate", "Pellion", "Vastmere", "Cordwain", "Eldenbrook",
    "Mossvale Keep", "Thane Rouven", "Ilsbeth Marrow", "Osgood Fenn",
    "Darnell Weft", "Quenby Hollow", "Sarkis Vance",
]
# Background titles for rule-2 / drop articles; never mentioned in questions.
TITLES_BG = [
    "Regional Survey", "Coastal Records", "Archive Volume Seven",
    "Provincial Annals", "Founding Charters", "Harvest Ledgers",
    "Border Commissions", "Meridian Gazetteer",
]

ANSWER_PHRASES = [
    "fourteen bronze bells", "the winter of 1287", "a fleet of nine barges",
    "three hundred masons", "the treaty of the low ford", "seven grain ships",
    "an aqueduct of fired clay", "the eleventh harvest season",
    "two rival guilds", "a toll of silver marks", "the great spring flood",
    "forty leagues of road", "a council of elders", "the second siege",
    "six watchtowers", "a library of vellum scrolls", "the salt monopoly",
    "nineteen fishing crews", "a bridge of iron chains", "the plague years",
    "five border forts", "a census of households", "the amber trade",
    "twelve apprentice smiths", "the northern causeway", "a ring of standing stones",
]

FILLER = [
    "Chroniclers of the period disagree about many of the finer details.",
    "Most surviving accounts were copied by later scribes.",
    "Little of the original settlement remains visible today.",
    "The surrounding farmland supported a modest population.",
    "Merchants passed through on their way to the coast.",
    "Several of the records were damaged by damp and mice.",
    "Local custom preserved the older names for generations.",
    "The road south stayed impassable for much of each year.",
    "Taxes were assessed twice yearly by travelling clerks.",
    "A later archivist numbered the folios by hand.",
]

UNI_LEAD = [
    "According to the sagas of the far north, written in an old århundrede, ",
    "A café ledger from the harbour quarter, kept with naïve care, notes that ",
    "The chronicle of the fjord towns—søfolk and traders alike—records that ",
]


def tokens(s):
    return [t.lower() for t in re.findall(r"[0-9a-zA-Z\x80-￿]+", s)]


def contains_seq(hay, needle):
    h, n = tokens(hay), tokens(needle)
    if not n or len(h) < len(n):
        return False
    return any(h[i:i + len(n)] == n for i in range(len(h) - len(n) + 1))


def normalize(s):
    return re.sub(r"^[^0-9a-zA-Z\x80-￿]+|[^0-9a-zA-Z\x80-￿]+$", "", s).lower()


def byte_off(ctx, cp):
    return len(ctx[:cp].encode("utf-8"))


def vote(ctx, answers):
    freq = {}
    for text, _ in answers:
        n = normalize(text)
        freq[n] = freq.get(n, 0) + 1
    best = None
    for text, cp in answers:
        n = normalize(text)
        key = (-freq[n], len(n), n, byte_off(ctx, cp), len(text), text)
        if best is None or key < best[0]:
            best = (key, text, cp)
    return best[1], best[2]


def dict_entities(s):
    found = set()
    for e in DICTIONARY:
        if contains_seq(s, e):
            found.add(normalize(e))
    return found


def assign(title, context, question):
    if title and contains_seq(question, title):
        return title
    shared = dict_entities(context) & dict_entities(question)
    if len(shared) == 1:
        surf = shared.pop()
        for e in DICTIONARY:
            if normalize(e) == surf:
                return e
    return None


def classify(rec, title):
    if rec["is_impossible"]:
        return "imposs"
    ans_text, _ = vote(rec["_context"], [(a["text"], a["answer_start"])
                                         for a in rec["answers"]])
    entity = assign(title, rec["_context"], rec["question"])
    if entity is None:
        return "drop-none" if len(
            dict_entities(rec["_context"]) & dict_entities(rec["question"])
        ) == 0 else "drop-two"
    if not contains_seq(rec["_context"], entity):
        return "drop-absent"
    if ans_text.lower() == entity.lower():
        return "drop-ansent"
    return "pass"


class Builder:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.answer_i = 0

    def answer(self):
        a = ANSWER_PHRASES[self.answer_i % len(ANSWER_PHRASES)]
        self.answer_i += 1
        return a

    def fillers(self, k):
        return " ".join(self.rng.sample(FILLER, k))

    def context(self, mention, answer, unicode_lead=False, extra_mention=None,
                long=False):
        lead = self.rng.choice(UNI_LEAD) if unicode_lead else ""
        parts = [
            f"{lead}the records of {mention} describe a long and uneven history.",
            self.fillers(2 if not long else 5),
            f"In one well known entry the scribes credit {answer} with changing "
            f"the fortunes of the district.",
        ]
        if extra_mention:
            parts.append(f"A marginal note links the account to {extra_mention}.")
        parts.append(self.fillers(1))
        ctx = " ".join(parts)
        return ctx[0].upper() + ctx[1:]

    def question_about(self, mention):
        forms = [
            f"What did the scribes credit with changing the fortunes of {mention}?",
            f"Which entry in the records of {mention} names a turning point?",
            f"What changed the fortunes of the district around {mention}?",
            f"According to the records of {mention}, what altered the district?",
        ]
        return self.rng.choice(forms)

    def question_plain(self):
        forms = [
            "What did the scribes credit with changing the fortunes of the district?",
            "Which event do the records name as a turning point?",
            "What altered the district according to the entry?",
        ]
        return self.rng.choice(forms)


def simple_answers(ctx, ans):
    cp = ctx.index(ans)
    return [{"text": ans, "answer_start": cp}]


def majority_answers(ctx, ans):
    cp = ctx.index(ans)
    words = ans.split()
    sub = " ".join(words[1:]) if len(words) > 2 else ans
    sub_cp = ctx.index(sub)
    return [
        {"text": ans, "answer_start": cp},
        {"text": ans, "answer_start": cp},
        {"text": sub, "answer_start": sub_cp},
    ]


def tie_answers(ctx, ans):
    # One long and one short variant, once each: the shorter normalized text wins.
    cp = ctx.index(ans)
    words = ans.split()
    short = words[-1]
    short_cp = ctx.index(short, cp)
    return [
        {"text": ans, "answer_start": cp},
        {"text": short, "answer_start": short_cp},
    ]


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "."
    b = Builder(20260814)

    articles = {}  # title -> list of paragraph dicts

    def add(title, rid, context, question, answers, impossible=False):
        rec = {
            "id": rid,
            "question": question,
            "is_impossible": impossible,
            "answers": [] if impossible else answers,
            "_context": context,
        }
        want = rid.split("/")[1].rsplit("-", 1)[0]
        got = classify(rec, title)
        got = "pass" if got == "pass" and want.startswith("pass") else got
        label = want if want in ("pass-r1", "pass-r2") else want
        ok = (got == "pass" and label.startswith("pass")) or got == label
        assert ok, f"{rid}: labeled {label} but behaves as {got}"
        if label == "pass-r1":
            assert title and contains_seq(question, title), rid
        if label == "pass-r2":
            assert not (title and contains_seq(question, title)), rid
        for a in rec["answers"]:
            s = a["answer_start"]
            assert context[s:s + len(a["text"])] == a["text"], rid
        articles.setdefault(title, []).append(
            {"context": context, "qas": [
                {k: v for k, v in rec.items() if not k.startswith("_")}
            ]})

    def build_corpus(prefix, n_r1, n_r2, n_none, n_two, n_ansent, n_absent,
                     n_imposs):
        for i in range(n_r1):
            title = TITLES_R1[i % len(TITLES_R1)]
            ans = b.answer()
            uni = i % 12 == 3
            ctx = b.context(title, ans, unicode_lead=uni, long=(i % 17 == 5))
            q = b.question_about(title)
            if i % 4 == 1:
                answers = majority_answers(ctx, ans)
            elif i % 9 == 2:
                answers = tie_answers(ctx, ans)
            else:
                answers = simple_answers(ctx, ans)
            add(title, f"{prefix}/pass-r1-{i:04d}", ctx, q, answers)
        for i in range(n_r2):
            title = TITLES_BG[i % len(TITLES_BG)] if i % 7 != 4 else ""
            ent = DICTIONARY[i % len(DICTIONARY)]
            ans = b.answer()
            ctx = b.context(ent, ans, unicode_lead=(i % 8 == 2))
            q = b.question_about(ent)
            add(title, f"{prefix}/pass-r2-{i:04d}", ctx, q,
                majority_answers(ctx, ans) if i % 5 == 3 else simple_answers(ctx, ans))
        for i in range(n_none):
            title = TITLES_BG[(i + 3) % len(TITLES_BG)]
            ctx_ent = DICT_SINGLE[i % len(DICT_SINGLE)]
            q_ent = DICT_SINGLE[(i + 5) % len(DICT_SINGLE)]
            ans = b.answer()
            ctx = b.context(ctx_ent, ans)
            q = b.question_about(q_ent) if i % 2 == 0 else b.question_plain()
            add(title, f"{prefix}/drop-none-{i:04d}", ctx, q, simple_answers(ctx, ans))
        for i in range(n_two):
            title = TITLES_BG[(i + 1) % len(TITLES_BG)]
            e1 = DICT_SINGLE[i % len(DICT_SINGLE)]
            e2 = DICT_DOUBLE[i % len(DICT_DOUBLE)]
            ans = b.answer()
            ctx = b.context(e1, ans, extra_mention=e2)
            q = (f"How are {e1} and {e2} connected in the surviving records?")
            add(title, f"{prefix}/drop-two-{i:04d}", ctx, q, simple_answers(ctx, ans))
        for i in range(n_ansent):
            title = TITLES_R1[(i + 6) % len(TITLES_R1)]
            ctx = b.context(title, title.lower(), long=False)
            q = b.question_about(title)
            add(title, f"{prefix}/drop-ansent-{i:04d}", ctx, q,
                simple_answers(ctx, title.lower()))
        for i in range(n_absent):
            title = TITLES_R1[(i + 9) % len(TITLES_R1)]
            other = TITLES_BG[i % len(TITLES_BG)]
            ans = b.answer()
            ctx = b.context(other, ans)
            q = b.question_about(title)
            add(title, f"{prefix}/drop-absent-{i:04d}", ctx, q, simple_answers(ctx, ans))
        for i in range(n_imposs):
            title = TITLES_BG[i % len(TITLES_BG)]
            ctx = b.context(DICT_SINGLE[(i + 2) % len(DICT_SINGLE)], b.answer())
            q = b.question_plain()
            add(title, f"{prefix}/imposs-{i:04d}", ctx, q, [], impossible=True)

    build_corpus("train", 60, 45, 25, 10, 5, 5, 20)
    train_articles = {t: ps for t, ps in articles.items()}
    articles.clear()
    build_corpus("dev", 12, 8, 4, 2, 0, 0, 4)
    dev_articles = {t: ps for t, ps in articles.items()}

    def to_squad(article_map):
        data = []
        for title in sorted(article_map):
            entry = {"paragraphs": article_map[title]}
            if title:
                entry["title"] = title
            data.append(entry)
        return {"version": "v2.0", "data": data}

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "squad_train.json"), "w") as f:
        json.dump(to_squad(train_articles), f, ensure_ascii=False, indent=1)
    with open(os.path.join(out_dir, "squad_dev.json"), "w") as f:
        json.dump(to_squad(dev_articles), f, ensure_ascii=False, indent=1)
    with open(os.path.join(out_dir, "ner_dictionary.json"), "w") as f:
        json.dump(DICTIONARY, f, ensure_ascii=False, indent=1)

    n_train_recs = sum(len(p["qas"]) for ps in train_articles.values() for p in ps)
    n_dev_recs = sum(len(p["qas"]) for ps in dev_articles.values() for p in ps)
    passing_train = 60 + 45
    n_val = round(0.074 * passing_train)
    print(f"train corpus: {n_train_recs} records, dev corpus: {n_dev_recs}")
    print(f"expected: train={passing_train - n_val} validation={n_val} test=20")
    print("expected counters: unanswerable=24 no_entity=41 "
          "answer_is_entity=5 entity_absent=5")


if __name__ == "__main__":
    main()
