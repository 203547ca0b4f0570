"""Walk through the alignment machinery on tiny, readable grids.

Run with ``python3 demos/01_alignment_walkthrough.py``.
"""
import numpy as np

from dysalign.align import ctc_loss, lcs_align, monotonic_forward, monotonic_log_likelihood

TEXT = ["P", "L", "IY", "Z"]
SPEECH = ["P", "P", "L", "EY", "SIL-EY", "Z"]
REALIZES = {"P": "P", "L": "L", "EY": "IY", "SIL-EY": "IY", "Z": "Z"}


def show_grid(Y, rows, cols):
    print("        " + "".join(f"{c:>7}" for c in cols))
    for r, row in zip(rows, Y):
        print(f"{r:>8}" + "".join(f"{v:7.2f}" for v in row))


def main():
    # a hand-built emission grid for "please" spoken with a repeated P and a broken vowel
    Y = np.array([[0.97 if REALIZES[s] == t else 0.01 for t in TEXT] for s in SPEECH])
    print("emission grid (speech frames x text tokens)")
    show_grid(Y, SPEECH, TEXT)

    # monotonic forward: probability mass of every path that visits tokens in order
    alpha = monotonic_forward(Y)
    print(f"\nmonotonic path mass      {alpha[-1, -1]:.4e}")
    print(f"monotonic log-likelihood {monotonic_log_likelihood(Y):.4f}")

    # CTC over the same tokens with a blank column prepended
    blank = np.full((len(SPEECH), 1), 0.02)
    ids = list(range(1, len(TEXT) + 1))
    print(f"CTC negative log-lik     {ctc_loss(np.hstack([blank, Y]), ids).item():.4f}")

    # LCS keeps the longest in-order chain of confident pairs and groups the rest
    spans = lcs_align(Y).alignment.spans
    print("\nLCS alignment")
    for tok, (s, e) in zip(TEXT, spans):
        print(f"  {tok:>3} <- {SPEECH[s:e + 1]}")


if __name__ == "__main__":
    main()
