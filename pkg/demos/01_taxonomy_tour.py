"""Tour of the 24 driving contexts: what they are, what asks about them,
and which AV subsystems care.

Run: python demos/01_taxonomy_tour.py
"""

from contextd import taxonomy, question_for, subsystems_for, kind_for_question
from contextd.taxonomy import taxonomy_version, template_version

print(f"taxonomy v{taxonomy_version()}, templates v{template_version()}")
print(f"{len(taxonomy())} binary contexts -> {2 ** len(taxonomy()):,} possible scenes\n")

print(f"{'id':<22} {'category':<13} {'refresh':<8} subsystems")
for kind in taxonomy():
    print(f"{kind.id:<22} {kind.category:<13} {kind.refresh_class:<8} "
          f"{', '.join(sorted(kind.relevant_subsystems))}")

print("\nEvery kind owns one canonical yes/no question, e.g.:")
for kind_id in ("daytime", "rainy", "tunnel", "urban_canyon"):
    print(f"  {kind_id:<22} {question_for(kind_id)!r}")

print("\nTemplates are injective, so questions map back to their kind:")
question = "Is this a road with visible lane markers?"
print(f"  {question!r} -> {kind_for_question(question).id}")
