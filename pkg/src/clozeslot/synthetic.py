"""Deterministic synthetic corpora for desk-scale experiments.

Two generators share the same value factories (people, times, dates, cities,
venues, ...):

* :func:`generate_corpus` emits chatty forum-style comments in which values
  recur across different sentence frames, so the keyphrase/pairing pipeline
  finds them as shared low-frequency phrases.
* :func:`generate_slot_data` emits labeled single-turn utterances for a small
  set of task domains. Values are split into disjoint train and test halves;
  frames can be split too, so test utterances also use unseen phrasings.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Callable

from .labeled import LabeledExample
from .text_corpus import RawComment

FIRST = """alice bruno carmen dmitri elena farid greta hugo ines jonas kaori liam marta nadia oskar
priya quentin rosa stefan tamsin ulrich vera wendell ximena yusuf zora anders beatrix cyrus delphine emeka
fiona gideon hanna idris juno kasimir lorna mateo noor aaron abigail adrian agnes akira alma amara anton
aria arjun astrid aurelio basil bianca boris callum camille cedric celeste dario dora edgar elif enzo esme
fabian faye felix freya gaspar gemma hamish harriet helga ingrid isaac ivo jasper jolene kenji keira laszlo
leona lucian lydia magnus maeve milo mina nikolai nell odette olaf paloma pavel petra quinn rafael remy rhea
rufus sabine sami selma silas soren talia teodor thea tobias ulla umar valentin vesna wanda wilhelm xavier
yara yuri zeno zuri amos brigid corin dagny emil flora gunnar hester""".split()
LAST = """abernathy bellweather castellano drummond eskildsen fairbanks galloway halvorsen ibarra jablonski
kowalczyk lindqvist montgomery nakashima okonkwo pemberton quintero rasmussen sorensen tremblay underhill
valderrama whitcombe yamamoto zielinski ashdown blackwood calloway delacroix everhart ackerman barrington
brennan carrow dalgleish eastwood farrow gallagher hargreaves holloway ingram jennings kavanagh kingsley
lockhart marchetti mcallister northcott oduya pennington radcliffe rourke salazar stavros thorne trevelyan
vance wakefield winslow yardley zamora aldridge bancroft castillo dunmore ellwood fitzroy gutierrez hawthorne
iverson jankowski kerrigan lachance mendoza novak ortega petrakis quigley rinaldi sandoval takahashi ulyanov
vasquez westbrook yilmaz zubiri beaumont crowther devereux fernsby granger hutchins""".split()
MONTHS = "january february march april may june july august september october november december".split()
WEEKDAYS = "monday tuesday wednesday thursday friday saturday sunday".split()
NUMBER_WORDS = "two three four five six seven eight nine ten eleven twelve".split()
SYLLABLES = """bar ven tor lis mar quel dra sol fen oru kal mir zan tes pol vik lun gar hes ost
rin bel cor dun el fal gri hal ith jor""".split()
ADJECTIVES = """golden crimson silver hidden rusty velvet copper lucky quiet painted salty broken
emerald wild amber lonely""".split()
NOUNS = """lantern anchor fox kettle sparrow orchard harbor compass willow barrel lighthouse
pepper garden thimble otter""".split()
DISHES = """risotto ramen paella goulash tagine bibimbap ceviche moussaka pierogi laksa jambalaya
shakshuka biryani gnocchi""".split()


def _ordinal(n: int) -> str:
    suffix = "th" if 10 <= n % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def _coined(rng: random.Random, parts: int) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(parts))


ValueFactory = Callable[[random.Random], str]


def _person(rng):
    return f"{rng.choice(FIRST).title()} {rng.choice(LAST).title()}"


def _first_name(rng):
    return rng.choice(FIRST).title()


def _last_name(rng):
    return rng.choice(LAST).title()


def _time(rng):
    h = rng.randint(1, 12)
    m = rng.choice([0, 15, 30, 45])
    form = rng.randrange(3)
    if form == 0:
        return f"{h}{rng.choice(['pm', 'am'])}"
    if form == 1:
        return f"{h}:{m:02d}{rng.choice(['pm', 'am'])}"
    return f"{rng.randint(13, 22)}:{m:02d}"


def _date(rng):
    if rng.random() < 0.85:
        return f"{rng.choice(MONTHS).title()} {_ordinal(rng.randint(1, 28))}"
    return f"next {rng.choice(WEEKDAYS).title()}"


def _city(rng):
    return _coined(rng, rng.choice([2, 3])).title()


def _venue(rng):
    return f"{rng.choice(NOUNS).title()} & {rng.choice(NOUNS).title()}"


def _dish(rng):
    return f"{rng.choice(['spicy', 'smoked', 'vegan', 'crispy', 'creamy', 'grilled', 'sweet'])} {rng.choice(DISHES)}"


def _band(rng):
    return f"the {rng.choice(ADJECTIVES).title()} {rng.choice(NOUNS).title()}s"


def _price(rng):
    return f"{rng.randint(100, 399)} dollars"


def _guests(rng):
    n = rng.randint(2, 12)
    return f"{n if rng.random() < 0.5 else NUMBER_WORDS[n - 2]} {rng.choice(['people', 'guests', 'of us'])}"


def _party(rng):
    # wider than a booking's party size so forum values can recur across frames
    n = rng.randint(2, 99)
    return f"{n if n > 12 or rng.random() < 0.5 else NUMBER_WORDS[n - 2]} {rng.choice(['people', 'guests'])}"


def _nights(rng):
    n = rng.randint(2, 12)
    return f"{n if rng.random() < 0.5 else NUMBER_WORDS[n - 2]} nights"


BRANDS = "nokto pixelon varda quillo zenthe orbix lumio tarsk".split()
TEAM_SUFFIXES = ("United", "Rovers", "Athletic", "Wanderers")
STREET_SUFFIXES = ("Street", "Road", "Lane", "Avenue")
DURATION_UNITS = ("minutes", "hours")


def _street(rng):
    return f"{rng.randint(2, 99)} {rng.choice(NOUNS).title()} {rng.choice(STREET_SUFFIXES)}"


def _flight(rng):
    return f"{rng.choice('ABCDEFKLMU')}{rng.choice('ABKLOXYZ')}{rng.randint(100, 999)}"


def _distance(rng):
    return f"{rng.randint(2, 40)}.{rng.randint(0, 9)} {rng.choice(['km', 'miles'])}"


def _room(rng):
    return f"room {rng.randint(400, 999)}"


def _year(rng):
    return str(rng.randint(1850, 2020))


def _username(rng):
    return f"{rng.choice(ADJECTIVES)}{rng.choice(NOUNS)}{rng.randint(10, 99)}"


def _temperature(rng):
    return f"{rng.randint(0, 42)} degrees"


def _gadget(rng):
    return f"{rng.choice(BRANDS).title()} {rng.choice(['X', 'Pro ', 'Mini ', 'S'])}{rng.randint(2, 12)}"


def _percent(rng):
    return f"{rng.randint(5, 99)} percent"


def _website(rng):
    return f"{rng.choice(NOUNS)}{rng.choice(NOUNS)}.{rng.choice(['com', 'net', 'io'])}"


def _version(rng):
    return f"v{rng.randint(1, 9)}.{rng.randint(0, 19)}"


def _duration(rng):
    return f"{rng.randint(41, 99)} {rng.choice(DURATION_UNITS)}"


def _team(rng):
    return f"{rng.choice(NOUNS).title()} {rng.choice(TEAM_SUFFIXES)}"


def _score(rng):
    return f"{rng.randint(0, 9)}-{rng.randint(0, 9)}"


FACTORIES: dict[str, ValueFactory] = {
    "person": _person,
    "first_name": _first_name,
    "last_name": _last_name,
    "time": _time,
    "date": _date,
    "city": _city,
    "venue": _venue,
    "dish": _dish,
    "band": _band,
    "price": _price,
    "people": _guests,
    "party": _party,
    "nights": _nights,
    "street": _street,
    "flight": _flight,
    "distance": _distance,
    "room": _room,
    "year": _year,
    "username": _username,
    "temperature": _temperature,
    "gadget": _gadget,
    "percent": _percent,
    "website": _website,
    "version": _version,
    "duration": _duration,
    "team": _team,
    "score": _score,
}


def _value_hash(value: str) -> float:
    digest = hashlib.blake2b(value.lower().encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def _value_pool(kind: str, size: int, rng: random.Random, split: str | None = None, test_share: float = 0.3) -> list[str]:
    """``size`` distinct values (fewer if the space is small); ``split`` keeps a hash-disjoint part."""
    seen: dict[str, None] = {}
    for _ in range(size * 50):
        v = FACTORIES[kind](rng)
        if split == "train" and _value_hash(v) < test_share:
            continue
        if split == "test" and _value_hash(v) >= test_share:
            continue
        seen.setdefault(v, None)
        if len(seen) == size:
            break
    return list(seen)


# ---------------------------------------------------------------- pretraining corpus

# Every frame carries two values of distinct kinds, never at a sentence edge (so
# openers and closers cannot fuse with a value). Within a group, the words just
# left and right of a kind differ from frame to frame, and a value is reused only
# in frames it has not appeared in yet; two sentences that share a value
# therefore share little context beyond it, which keeps the expanded keyphrase
# close to the value itself.
CORPUS_FRAMES: dict[str, list[str]] = {
    "food": [
        "we took {person} out for dinner on {date} and loved it",
        "a table in {city} at {time} was easy to get",
        "dinner during {date} came to {price} with drinks",
        "the new place near {city} opens around {time} every day",
        "lunch with {person} cost us {price} in total",
        "booked brunch for {person} beside {city} station",
        "the tasting menu costs {price} per head since {date} sadly",
        "my cousin waited until {time} for a table at {city} downtown",
        "the food festival starts {date} according to {person} apparently",
        "we queued from {time} and paid {price} for noodles",
    ],
    "dining": [
        "we booked a table for {party} on {date} at that new place",
        "the reservation is under {last_name} at {time} tonight",
        "our waiter {first_name} brought a bill of {price} with a smile",
        "they could only seat {party} after {time} so we waited",
        "ask for {first_name} when you call, they reopen {date} after the holidays",
        "dinner with the {last_name} family came to {price} for everyone",
        "my friend {first_name} will join us around {time} probably",
        "a booking in the name of {last_name} was moved to {date} by mistake",
        "we will be {party} so we want to sit outside from {time} onwards",
        "chef {first_name} ended up feeding {party} yesterday",
        "the set menu was {price} per head until {date} i think",
        "a guy called {first_name} paid {price} just for the wine",
        "we bumped into mrs {last_name} before {time} last week",
        "a crowd of {party} showed up {date} without booking",
    ],
    "travel": [
        "just got back from {city} after {duration} there",
        "flight {flight} to {city} was delayed again",
        "we stayed from {date} in {room} and the view was great",
        "the hotel is {distance} outside {city} by bus",
        "we land in {city} on {date} around noon",
        "they rebooked me onto {flight} departing {date} so wish me luck",
        "hiked {distance} near {city} yesterday",
        "asked for {room} but paid {price} for something else",
        "spent {duration} abroad and it cost {price} total",
        "booked {room} until {date} and it was fine",
    ],
    "music": [
        "saw {person} live in {year} and it was unreal",
        "tickets to see {person} cost {price} now",
        "the gig near {city} on {date} sold out fast",
        "my friend swears {person} peaked around {year} honestly",
        "the new album drops {date} according to {username} apparently",
        "we drove to {city} during {year} just for one show",
        "front row seats at {city} were {price} each",
        "my first concert was back when {year} started with {person} singing",
        "got tickets from {username} for {price} and they were real",
        "the festival left {city} after {year} for good",
    ],
    "chat": [
        "happy birthday to {person} who turns thirty on {date} apparently",
        "my dentist appointment got moved to {date} at {time} sadly",
        "we are meeting {person} for coffee around {time} today",
        "follow {username} for more cat pictures from {city} daily",
        "it was freezing during {date} in {city} and i still went running",
        "pretty sure {person} still owes me money since {date} honestly",
        "the party starts after {time} and lasts until {date} so save the date",
        "shoutout to {username} plus {person} because they fixed my bike",
        "forecast says rain near {city} by {date} which is awful",
        "my shift ends by {time} then {person} takes over",
    ],
    "tech": [
        "my phone battery dies after {duration} since {version} shipped",
        "just bought a laptop from {website} for {price} total",
        "the site {website} has been down for {duration} now",
        "the update to {version} made it slower for {username} apparently",
        "install took {duration} with {version} on my machine",
        "they sell the tablet on {website} at {price} right now",
        "cpu usage spiked after {version} hit {website} mirrors",
        "waited {duration} on hold with {website} support",
        "a bug in {version} was reported by {username} last week",
        "benchmarks from {username} cost {price} to run",
    ],
    "sports": [
        "the home side won {score} in {city} last night",
        "watching {person} score twice near {city} was great",
        "the {score} final back in {year} was brutal",
        "the club from {city} has not won since {year} sadly",
        "my mate says {person} signed during {year} for way too much",
        "i was there when they lost {score} around {year} to a late goal",
        "ran {distance} this morning in {duration} flat",
        "the fans at {city} sang for {duration} straight",
        "our keeper {person} sprinted {distance} during warmups",
        "that {score} comeback led by {person} was the best game ever",
    ],
}

# Unit words may recur across value kinds; any other word of a corpus value is
# confined to one kind of a group, so a rare word shared by two sentences never
# links values of different kinds (e.g. "57 km" and "57 dollars").
SHARED_VALUE_WORDS = frozenset("dollars km miles minutes hours next room people guests".split())

# A corpus value appears in at most this many sentences, each with a different frame.
CORPUS_VALUE_REUSE = 3

OPENERS = ("", "", "", "honestly ", "lol ", "update: ", "not gonna lie, ", "fun fact: ", "so ", "ok so ")
CLOSERS = ("", "", "", " lol", " tbh", "!", " haha", " for real", ", just saying", " :)")


def _disjoint_pools(kinds: list[str], size: int, rng: random.Random) -> dict[str, list[str]]:
    """Up to ``size`` values per kind. Words outside :data:`SHARED_VALUE_WORDS`
    never occur in values of two different kinds, and no two values have the same
    set of such words (so "26 km" and "26 miles" cannot both be drawn)."""
    owner: dict[str, str] = {}
    pools = {}
    for kind in kinds:
        pool: dict[frozenset, str] = {}
        for _ in range(size * 50):
            value = FACTORIES[kind](rng)
            words = frozenset(w for w in value.lower().split() if w not in SHARED_VALUE_WORDS)
            if words in pool or any(owner.get(w, kind) != kind for w in words):
                continue
            owner.update(dict.fromkeys(words, kind))
            pool[words] = value
            if len(pool) == size:
                break
        pools[kind] = list(pool.values())
    return pools


def _fill(frame: str, values: dict[str, str]) -> tuple[str, dict[str, tuple[int, int]]]:
    """Format ``frame`` and return character spans of each filled placeholder."""
    out, spans, pos = [], {}, 0
    i = 0
    while i < len(frame):
        if frame[i] == "{":
            j = frame.index("}", i)
            kind = frame[i + 1 : j]
            value = values[kind]
            spans[kind] = (pos, pos + len(value))
            out.append(value)
            pos += len(value)
            i = j + 1
        else:
            out.append(frame[i])
            pos += 1
            i += 1
    return "".join(out), spans


def _kinds(frame: str) -> list[str]:
    kinds, i = [], 0
    while (i := frame.find("{", i)) >= 0:
        j = frame.index("}", i)
        kinds.append(frame[i + 1 : j])
        i = j
    return kinds


def generate_corpus(n_sentences: int = 5000, seed: int = 0, pool_size: int = 200) -> list[RawComment]:
    """Forum-style comments grouped by topic, with recurring slot-like values.

    Each group draws from its own value pools (at most ``pool_size`` values per
    kind). A slot reuses a value that has appeared fewer than
    :data:`CORPUS_VALUE_REUSE` times and never in the current frame when one
    exists, and starts a fresh value otherwise.
    """
    rng = random.Random(f"corpus-{seed}")
    groups = sorted(CORPUS_FRAMES)
    pools = {}
    for group in groups:
        kinds = sorted({k for f in CORPUS_FRAMES[group] for k in _kinds(f)})
        for kind, pool in _disjoint_pools(kinds, pool_size, rng).items():
            rng.shuffle(pool)
            pools[group, kind] = pool
    frames_of: dict[tuple[str, str], set[str]] = {}
    fresh_index = dict.fromkeys(pools, 0)
    out = []
    for _ in range(n_sentences):
        group = rng.choice(groups)
        frame = rng.choice(CORPUS_FRAMES[group])
        values = {}
        for kind in _kinds(frame):
            key = (group, kind)
            pool = pools[key]
            started = pool[: fresh_index[key]]
            open_values = [v for v in started
                           if len(frames_of[group, v]) < CORPUS_VALUE_REUSE and frame not in frames_of[group, v]]
            if open_values:
                value = rng.choice(open_values)
            elif fresh_index[key] < len(pool):
                value = pool[fresh_index[key]]
                fresh_index[key] += 1
                frames_of[group, value] = set()
            else:
                value = rng.choice(pool)
            frames_of[group, value].add(frame)
            values[kind] = value
        text, _ = _fill(rng.choice(OPENERS) + frame + rng.choice(CLOSERS), values)
        if rng.random() < 0.5:
            text = text[0].upper() + text[1:]
        out.append(RawComment(text, group))
    return out


# ---------------------------------------------------------------- labeled slot data


@dataclass(frozen=True)
class Domain:
    name: str
    slots: tuple[str, ...]
    frames: tuple[str, ...]  # placeholders are slot names
    slot_kinds: dict  # slot -> value factory name


DOMAINS: dict[str, Domain] = {
    "restaurants": Domain(
        "restaurants",
        ("date", "time", "people", "first_name", "last_name"),
        (
            "i would like a table for {people} on {date} at {time}",
            "can we book for {people} at {time} please",
            "a reservation on {date} for {people}",
            "{time} on {date} works for us",
            "my name is {first_name} {last_name}",
            "it is under {first_name} {last_name}",
            "{time} please",
            "for {people}",
            "{date} if possible",
            "the surname is {last_name}",
            "book it for {first_name}",
            "is there anything free on {date}?",
            "we are {people} and would like to come at {time}",
            "could you do {date} around {time} for {people}",
            "put it under {last_name}",
            "{first_name} {last_name}, and we will be {people}",
            "we want to come in {date} at {time}",
            "hi, table at {time} for {people} please",
            "do you have space for {people} on {date}",
            "how about {time}",
            "i am {first_name}",
            "reserve {date} for {first_name} {last_name}",
            "what time do you close on {date}?",
            "do you have vegetarian options?",
            "i need to cancel my booking",
            "is parking available nearby?",
        ),
        {"date": "date", "time": "time", "people": "people", "first_name": "first_name", "last_name": "last_name"},
    ),
    "hotels": Domain(
        "hotels",
        ("city", "check_in", "nights", "guests"),
        (
            "i need a room in {city} from {check_in} for {nights}",
            "we are {guests} travelling to {city}",
            "checking in {check_in}",
            "{nights} please",
            "somewhere in {city} for {guests}",
            "arriving {check_in} and staying {nights}",
            "a double room for {guests} starting {check_in}",
            "anything in {city}?",
            "we will stay {nights} in {city}",
            "book {city} for {check_in}",
            "it will be {guests}",
            "from {check_in} for {nights} for {guests}",
            "is breakfast included?",
            "do you allow pets?",
            "what is the cancellation policy?",
            "can i get a room with a view in {city}",
        ),
        {"city": "city", "check_in": "date", "nights": "nights", "guests": "people"},
    ),
    "events": Domain(
        "events",
        ("artist", "city", "date", "price"),
        (
            "are there tickets for {artist} in {city}",
            "i want to see {artist} on {date}",
            "anything under {price} in {city} on {date}",
            "how much are {artist} tickets, i can pay {price}",
            "{artist} in {city} please",
            "what is on in {city} on {date}",
            "my budget is {price}",
            "find me {artist} shows",
            "i am free on {date}",
            "is {artist} playing {city} on {date}",
            "two seats for {artist} up to {price}",
            "where is the venue?",
            "do kids need a ticket?",
            "i would like something in {city}",
        ),
        {"artist": "band", "city": "city", "date": "date", "price": "price"},
    ),
}


def _split_frames(frames, split: str, test_share: float = 0.35) -> list[str]:
    if split == "all":
        return list(frames)
    keep = []
    for f in frames:
        h = _value_hash("frame:" + f)
        if (h < test_share) == (split == "test"):
            keep.append(f)
    return keep


def generate_slot_data(
    domain: str, n_utterances: int, split: str = "train", seed: int = 0, requested_rate: float = 0.5,
    pool_size: int = 80, holdout_frames: bool = False,
) -> list[LabeledExample]:
    """Labeled utterances, one example per (utterance, slot).

    ``split`` picks disjoint value subsets ("train" / "test"), or "all" for
    both; utterances of either split are drawn from the same frames. With
    ``holdout_frames`` the two splits also use disjoint frames, which tests
    generalization to unseen phrasings. ``requested`` marks the slot the system asked about; a
    requested slot is one the utterance fills with probability ``requested_rate``.
    """
    if split not in ("train", "test", "all"):
        raise ValueError("split must be 'train', 'test' or 'all'")
    dom = DOMAINS[domain]
    rng = random.Random(f"slots-{domain}-{split}-{seed}")
    value_split = None if split == "all" else split
    pools = {s: _value_pool(k, pool_size, rng, value_split) for s, k in dom.slot_kinds.items()}
    frames = _split_frames(dom.frames, split) if holdout_frames else list(dom.frames)
    out = []
    for n in range(n_utterances):
        frame = rng.choice(frames)
        kinds = _kinds(frame)
        values = {k: rng.choice(pools[k]) for k in kinds}
        text, spans = _fill(frame, values)
        if kinds and rng.random() < requested_rate:
            requested = rng.choice(kinds)
        else:
            requested = rng.choice(dom.slots) if rng.random() < 0.3 else None
        sid = f"{domain}-{split}{'-heldout' if holdout_frames else ''}-{seed}-{n}"
        for slot in dom.slots:
            out.append(LabeledExample(text, slot, spans.get(slot), slot == requested, sid))
    return out
