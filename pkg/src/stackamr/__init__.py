"""Stack-LSTM transition-based AMR parsing toolkit."""
from .amr import AmrGraph, TripleSet, parse_penman, serialize_penman, to_triples
from .align import AlignmentMap, Span, merge_alignments
from .estimator import AmrParser
from .smatch import MetricSuite, metric_breakdown, smatch_exact, smatch_hill_climb
from .transition import Action, ParserState, apply, legal_actions, oracle

__all__ = ["AmrGraph", "TripleSet", "parse_penman", "serialize_penman", "to_triples",
           "AlignmentMap", "Span", "merge_alignments", "AmrParser", "MetricSuite",
           "metric_breakdown", "smatch_exact", "smatch_hill_climb", "Action", "ParserState",
           "apply", "legal_actions", "oracle"]
__version__ = "0.1.0"
