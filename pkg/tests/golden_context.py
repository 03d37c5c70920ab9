"""Fixed seven-fragment context used by the prompt golden file."""

from primod.kb import KnowledgeFragment, SourceKb
from primod.retrieval import ScoredFragment

_ROWS = [
    (SourceKb.LINDDUN, "L/L.1", "Linkability: Linking data items. Two or more items of interest can be related to the same person."),
    (SourceKb.AI_PRIVACY_KB, "9", "Sensor Data Re-identification. Camera frames allow bystanders to be re-identified.\n\nAI lifecycle stage: Data Collection."),
    (SourceKb.LINDDUN, "I/I.1", "Identifiability: Identifying a data subject from observable attributes such as faces or licence plates."),
    (SourceKb.LINDDUN, "DT", "Detectability: An observer can deduce that an item of interest exists, e.g. by watching traffic."),
    (SourceKb.AI_PRIVACY_KB, "3", "Inference Attacks on Model Outputs. Attackers infer sensitive data from the model's predictions or outputs."),
    (SourceKb.LINDDUN, "DD/DD.1", "Disclosure of Information: Unprotected transfer exposes personal data to unauthorised parties."),
    (SourceKb.LINDDUN, "U", "Unawareness: Data subjects are not informed that their image is being captured and processed."),
]


def golden_context() -> list[ScoredFragment]:
    out = []
    for rank, (source, origin, text) in enumerate(_ROWS):
        frag = KnowledgeFragment(f"{source.value}:{origin}#0", source, text, origin)
        out.append(ScoredFragment(frag, round(0.9 - 0.1 * rank, 2)))
    return out
