"""Machine annotation by multi-backend agreement, and the review flow.

A label is recorded only when every backend agrees with confidence
strictly above the threshold; everything else lands on the uncertain pile
with a reason. A stratified sample then goes to human review.

Run: python demos/03_agreement_annotation.py
"""

from contextd import taxonomy
from contextd.annotation import Decision, machine_annotate, review, sample_for_review
from contextd.protocol.mock import GroundTruthStore, MockBackend, NoiseModel
from contextd.synthetic import make_truth

refs = [f"img:{i:03d}" for i in range(8)]
truth = make_truth(refs, seed=14)

backends = [
    MockBackend(truth, seed=1, name="model-a"),
    MockBackend(truth, noise=NoiseModel(flip_prob=0.08), seed=2, name="model-b"),
]

records, uncertain = [], []
next_qid = 0
for ref in refs:
    recs, unc = machine_annotate(ref, taxonomy(), backends, threshold=0.9,
                                 image_id=ref, question_id_start=next_qid)
    next_qid += len(recs)
    records.extend(recs)
    uncertain.extend(unc)

print(f"{len(records)} records agreed, {len(uncertain)} uncertain "
      f"out of {len(refs) * 24} pairs")
reasons = {}
for item in uncertain:
    reasons[item.reason] = reasons.get(item.reason, 0) + 1
print("uncertainty reasons:", reasons)

sample = sample_for_review(records, rate=0.1, seed=5)
print(f"\nreview sample: {len(sample)} records, "
      f"{len({r.kind_id for r in sample})} distinct kinds")

decisions = [Decision(sample[0].question_id, "accept"),
             Decision(sample[1].question_id, "reject"),
             Decision(sample[2].question_id, "skip")]
result = review(records, decisions, clock=lambda: 1_700_000_000.0)
outcomes = {}
for entry in result.audit:
    outcomes[entry.outcome] = outcomes.get(entry.outcome, 0) + 1
print("after review:", outcomes, f"-> {len(result.records)} records remain")
verified = [r for r in result.records if r.origin == "verified"]
print("verified record:", verified[0].question, "->", verified[0].answer)
