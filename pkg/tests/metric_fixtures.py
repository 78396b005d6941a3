"""A fixed benchmark with metric values counted by hand.

Five queries, ranked outputs below; gold answers use aliases and
substitutes so that EM and HR disagree where they should.

    q1  gold CIFAR-10 at rank 1                 -> hits 1,1,1,1  EM 1  F1 1
    q2  gold COCO, top-1 "MS COCO dataset"      -> hits 1,1,1,1  EM 0  F1 0.5
        ("MS COCO dataset" is listed as a substitute, not an alias)
    q3  gold LAION-5B, substitute LAION-400M at rank 2
                                                -> hits 0,1,1,1  EM 0  F1 0  (top-1 "Conceptual Captions")
    q4  gold MIMIC-III via its long alias at rank 4
                                                -> hits 0,0,1,1  EM 0  F1 0  (top-1 "eICU")
    q5  empty result                            -> hits 0,0,0,0  EM 0  F1 0

    HR@1 = 2/5, HR@3 = 3/5, HR@5 = 4/5, HR@10 = 4/5, EM = 1/5, F1 = 1.5/5
"""

from taskds.evalbench import BenchmarkQuery, GoldAnswer

QUERIES = [
    BenchmarkQuery("q1", "classify tiny colour images into ten classes", (GoldAnswer("CIFAR-10"),)),
    BenchmarkQuery("q2", "detect objects in everyday scenes",
                   (GoldAnswer("COCO", frozenset(), frozenset({"MS COCO dataset"})),)),
    BenchmarkQuery("q3", "pretrain a large image-text model",
                   (GoldAnswer("LAION-5B", frozenset(), frozenset({"LAION-400M"})),)),
    BenchmarkQuery("q4", "predict mortality from ICU records",
                   (GoldAnswer("MIMIC-III", frozenset({"Medical Information Mart for Intensive Care III"})),)),
    BenchmarkQuery("q5", "something nobody has studied", (GoldAnswer("Nothing"),)),
]

OUTPUTS = {
    "q1": ["CIFAR-10", "SVHN"],
    "q2": ["MS COCO dataset", "Pascal VOC"],
    "q3": ["Conceptual Captions", "LAION-400M", "YFCC100M"],
    "q4": ["eICU", "PhysioNet", "HiRID", "Medical Information Mart for Intensive Care III"],
    "q5": [],
}

EXPECTED = {
    "hit_rate": {1: 2 / 5, 3: 3 / 5, 5: 4 / 5, 10: 4 / 5},
    "em_top1": 1 / 5,
    "f1_top1": 1.5 / 5,
}
