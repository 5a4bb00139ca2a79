"""Regenerate src/batchleak/data/corpus.txt (simple children's stories).

The text is produced by a seeded template grammar so the corpus is
reproducible byte-for-byte:  python scripts/make_corpus.py
"""

import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "batchleak" / "data" / "corpus.txt"
TARGET_BYTES = 320_000

NAMES = [
    ("Anna", "she"), ("Ben", "he"), ("Clara", "she"), ("Dan", "he"), ("Emma", "she"),
    ("Finn", "he"), ("Grace", "she"), ("Hugo", "he"), ("Ivy", "she"), ("Jack", "he"),
    ("Kate", "she"), ("Leo", "he"), ("Mia", "she"), ("Nick", "he"), ("Olive", "she"),
    ("Pete", "he"), ("Quinn", "she"), ("Rose", "she"), ("Sam", "he"), ("Tom", "he"),
    ("Uma", "she"), ("Vic", "he"), ("Wendy", "she"), ("Xavier", "he"), ("Yara", "she"),
    ("Zack", "he"), ("Lily", "she"), ("Max", "he"), ("Sue", "she"), ("Tim", "he"),
]
KINDS = ["girl", "boy", "dog", "cat", "bunny", "bird", "bear", "fox", "frog", "mouse", "duck", "lamb", "zebra"]
ADJS = ["little", "happy", "brave", "kind", "shy", "curious", "silly", "small", "big", "quiet", "clever", "sleepy"]
COLORS = ["red", "blue", "green", "yellow", "pink", "purple", "orange", "white", "brown", "shiny"]
OBJECTS = ["ball", "kite", "box", "hat", "cake", "book", "toy", "shell", "stone", "flower", "key", "cup",
           "boat", "drum", "sock", "apple", "map", "bell", "jar", "leaf", "puzzle"]
PLACES = ["a small house", "a big forest", "a quiet town", "a sunny farm", "a tall tree", "a green hill",
          "a busy city", "a little village", "a warm cave", "a house by the sea"]
SPOTS = ["in the park", "under a tree", "near the river", "in the garden", "on the beach", "by the door",
         "in the grass", "behind the barn", "at the top of the hill", "in an old box"]
LIKES = ["play in the sun", "run and jump", "sing songs", "read books", "dig in the sand", "eat apples",
         "draw pictures", "swim in the lake", "look at the stars", "help mom", "dance", "climb trees"]
FEELS = ["happy", "sad", "scared", "excited", "surprised", "proud", "tired", "angry", "glad", "worried"]
FRIEND_ACTS = ["shared the {obj}", "played a game", "went for a walk", "built a fort", "had a picnic",
               "looked for bugs", "made a big cake", "sang a song together", "raced to the tree"]
PROBLEMS = ["the {obj} was stuck in a tree", "it started to rain", "the {obj} fell into the water",
            "a strong wind took the {obj}", "the {obj} was broken", "the path was dark",
            "the door was locked", "the {obj} was lost"]
MORALS = ["Sharing is good.", "It is good to be kind.", "Friends help each other.",
          "Do not give up.", "Always say thank you.", "Be careful and listen.",
          "It is fun to try new things.", "Being brave can help."]
SAYS = ["said", "asked", "shouted", "cried", "laughed", "whispered"]
QUESTIONS = ["Can I play too?", "What is that?", "Where are you going?", "Do you want to help me?",
             "Why are you sad?", "Can we be friends?", "Is it yours?", "What should we do?"]
EXCLAIMS = ["Look at this!", "Wow!", "Oh no!", "Yay!", "Thank you!", "Come here!", "I did it!",
            "That is fun!", "Let us go!", "Help me, please!"]


def cap(s):
    return s[0].upper() + s[1:]


def story(rng):
    name, pro = rng.choice(NAMES)
    kind = rng.choice(KINDS)
    pos = "her" if pro == "she" else "his"
    obj = rng.choice(OBJECTS)
    col = rng.choice(COLORS)
    friend, _ = rng.choice([n for n in NAMES if n[0] != name])
    fkind = rng.choice(KINDS)
    lines = []
    opener = rng.choice([
        f"Once upon a time, there was a {rng.choice(ADJS)} {kind} named {name}.",
        f"One day, a {rng.choice(ADJS)} {kind} named {name} went outside.",
        f"There was a {kind} called {name} who lived in {rng.choice(PLACES)}.",
        f"{name} was a {rng.choice(ADJS)} {kind}.",
    ])
    lines.append(opener)
    lines.append(f"{cap(pro)} liked to {rng.choice(LIKES)}.")
    if rng.random() < 0.5:
        lines.append(f"{name} was {rng.randint(2, 9)} years old and had {rng.randint(1, 20)} toys.")
    if rng.random() < 0.3:
        lines.append(f"\"I don't want to stop,\" {name} {rng.choice(SAYS)}. \"It's too fun!\"")
    if rng.random() < 0.6:
        lines.append(f"Every day, {name} would {rng.choice(LIKES)} with {pos} mom.")
    lines.append(f"One day, {name} saw a {col} {obj} {rng.choice(SPOTS)}.")
    lines.append(f"\"{rng.choice(EXCLAIMS)}\" {name} {rng.choice(SAYS)}.")
    lines.append(f"{cap(pro)} felt very {rng.choice(FEELS)}.")
    if rng.random() < 0.7:
        lines.append(f"Then {name} met a {rng.choice(ADJS)} {fkind} named {friend}.")
        lines.append(f"\"{rng.choice(QUESTIONS)}\" {friend} {rng.choice(SAYS)}.")
        lines.append(f"{name} smiled and said, \"Yes! {rng.choice(EXCLAIMS)}\"")
        act = rng.choice(FRIEND_ACTS).format(obj=obj)
        lines.append(f"{name} and {friend} {act}.")
        if rng.random() < 0.4:
            lines.append(f"They counted {rng.randint(3, 60)} birds in the sky and {rng.randint(10, 99)} stars at night.")
    if rng.random() < 0.6:
        prob = rng.choice(PROBLEMS).format(obj=obj)
        lines.append(f"But then, {prob}.")
        lines.append(f"{name} was {rng.choice(FEELS)}. {cap(pro)} did not know what to do.")
        helper = friend if rng.random() < 0.5 else f"{pos} mom"
        lines.append(f"{cap(helper)} came to help, and soon everything was fine.")
    lines.append(rng.choice([
        f"At the end of the day, {name} went home and slept well.",
        f"{name} was happy, and the {col} {obj} was safe.",
        f"From that day on, {name} always kept the {obj} close.",
        f"They laughed and played until the sun went down.",
    ]))
    if rng.random() < 0.4:
        lines.append(rng.choice(MORALS))
    return " ".join(lines)


def main():
    rng = random.Random(20240601)
    parts, size = [], 0
    while size < TARGET_BYTES:
        s = story(rng)
        parts.append(s)
        size += len(s) + 1
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text("\n".join(parts) + "\n", encoding="ascii")
    chars = sorted(set("".join(parts) + "\n"))
    print(f"wrote {OUT} ({size} bytes, {len(chars)} symbols)")


if __name__ == "__main__":
    main()
