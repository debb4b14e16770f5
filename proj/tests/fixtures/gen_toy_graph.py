"""Regenerates toy_graph.jsonl (8-dimensional embeddings, fixed seed)."""
import json
import random

rng = random.Random(7)
DIM = 8


def vec():
    return [round(rng.gauss(0, 1), 6) for _ in range(DIM)]


scenes = ["forest", "park", "street", "kitchen", "beach", "alley"]
objects = ["dog", "cat", "robot", "tree", "bench", "trash", "garbage", "litter", "car", "house", "boat", "cake"]
attributes = ["snarling", "dim", "shadowy", "rotten", "golden", "glowing", "sunlit", "wilted", "rusty", "foggy",
              "crouching", "red", "low angle", "bright", "softly lit", "cracked", "sparkling", "moldy", "towering",
              "gray"]
emotions = ["amusement", "awe", "contentment", "excitement", "anger", "disgust", "fear", "sadness"]

lines = []
for s in scenes:
    lines.append({"kind": "node", "id": "s_" + s, "type": "scene", "text": s, "embedding": vec()})
for o in objects:
    lines.append({"kind": "node", "id": "o_" + o, "type": "object", "text": o, "embedding": vec()})
for i, a in enumerate(attributes):
    rec = {"kind": "node", "id": "a_" + a.replace(" ", "_"), "type": "attribute", "text": a, "embedding": vec()}
    if i % 2 == 0:
        rec["visual_prototype"] = vec()
    lines.append(rec)
for e in emotions:
    lines.append({"kind": "node", "id": "e_" + e, "type": "emotion", "text": e, "embedding": vec()})


def edge(h, r, t, w=1.0):
    lines.append({"kind": "edge", "head": h, "rel": r, "tail": t, "weight": w})


contains = {
    "forest": ["dog", "tree", "house"], "park": ["dog", "cat", "bench", "tree", "litter"],
    "street": ["car", "robot", "trash", "house"], "kitchen": ["cake", "cat", "garbage"],
    "beach": ["boat", "dog", "litter"], "alley": ["trash", "cat", "robot"],
}
for s, objs in contains.items():
    for o in objs:
        edge("s_" + s, "CONTAINS", "o_" + o)

has_attr = {
    "dog": ["snarling", "crouching", "golden"], "cat": ["crouching", "gray", "sparkling"],
    "robot": ["rusty", "glowing", "red"], "tree": ["towering", "wilted", "shadowy"],
    "bench": ["cracked", "sunlit"], "trash": ["rotten", "moldy"], "garbage": ["rotten", "gray"],
    "litter": ["cracked"], "car": ["red", "rusty", "bright"], "house": ["shadowy", "towering"],
    "boat": ["golden", "cracked"], "cake": ["sparkling", "moldy", "bright"],
    "forest": ["dim", "foggy", "low angle"], "park": ["sunlit", "bright"], "street": ["dim", "low angle"],
    "kitchen": ["softly lit", "bright"], "beach": ["sunlit", "golden"], "alley": ["dim", "shadowy", "foggy"],
}
for h, attrs in has_attr.items():
    prefix = "s_" if h in scenes else "o_"
    for a in attrs:
        edge(prefix + h, "HAS_ATTR", "a_" + a.replace(" ", "_"))

leads = {
    "snarling": {"fear": 0.9, "anger": 0.8}, "dim": {"fear": 0.7, "sadness": 0.65},
    "shadowy": {"fear": 0.8}, "rotten": {"disgust": 0.95}, "golden": {"contentment": 0.7, "awe": 0.75},
    "glowing": {"awe": 0.8, "excitement": 0.6}, "sunlit": {"contentment": 0.85, "amusement": 0.6},
    "wilted": {"sadness": 0.8}, "rusty": {"sadness": 0.5, "disgust": 0.4}, "foggy": {"fear": 0.65, "awe": 0.5},
    "crouching": {"fear": 0.55, "amusement": 0.3}, "red": {"anger": 0.85, "excitement": 0.7},
    "low angle": {"awe": 0.7, "fear": 0.6}, "bright": {"amusement": 0.75, "excitement": 0.8},
    "softly lit": {"contentment": 0.8}, "cracked": {"sadness": 0.6, "anger": 0.35},
    "sparkling": {"amusement": 0.8, "awe": 0.65}, "moldy": {"disgust": 0.9},
    "towering": {"awe": 0.85, "fear": 0.5}, "gray": {"sadness": 0.75},
}
for a, es in leads.items():
    for e, w in es.items():
        edge("a_" + a.replace(" ", "_"), "LEADS_TO", "e_" + e, w)

with open("toy_graph.jsonl", "w") as f:
    for rec in lines:
        f.write(json.dumps(rec) + "\n")
