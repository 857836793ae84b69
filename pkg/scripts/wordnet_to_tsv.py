"""Build a thesaurus file for ``--thesaurus`` from WordNet.

Needs ``nltk`` with the ``wordnet`` corpus downloaded; augkit itself does not.
Output lines are ``word<TAB>alt,alt,...`` with synonyms in WordNet order.

    python3 scripts/wordnet_to_tsv.py --out thesaurus.tsv --max-alts 10
"""
import argparse
import sys


def synonyms(wn, word: str, max_alts: int) -> list[str]:
    seen, out = {word}, []
    for synset in wn.synsets(word):
        for lemma in synset.lemma_names():
            alt = lemma.replace("_", " ").lower()
            if " " in alt or alt in seen:
                continue
            seen.add(alt)
            out.append(alt)
            if len(out) >= max_alts:
                return out
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--max-alts", type=int, default=10)
    p.add_argument("--words", help="restrict to the words in this file, one per line")
    args = p.parse_args(argv)
    try:
        from nltk.corpus import wordnet as wn
        wn.ensure_loaded()
    except (ImportError, LookupError) as e:
        print(f"wordnet unavailable ({e}); install nltk and run nltk.download('wordnet')", file=sys.stderr)
        return 2
    if args.words:
        with open(args.words, encoding="utf-8") as fh:
            vocab = sorted({w.strip().lower() for w in fh if w.strip()})
    else:
        vocab = sorted({w.lower() for w in wn.all_lemma_names() if w.isalpha()})
    n = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for word in vocab:
            alts = synonyms(wn, word, args.max_alts)
            if alts:
                fh.write(f"{word}\t{','.join(alts)}\n")
                n += 1
    print(f"wrote {n} entries to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
