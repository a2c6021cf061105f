"""
Management command to export the latent token graphs of one input as DOT.

Usage:
    python manage.py export_graph --checkpoint runs/c1/checkpoint.bin --input-text "3 1 4 1 5" --out graph.dot
"""
import numpy as np
from tabulate import tabulate

from apps.core.exceptions import ContractError
from apps.lab.management.base import LabCommand
from apps.modeling.checkpoint import Checkpoint, load_checkpoint
from apps.modeling.model import forward
from apps.structure.export import export_graph
from apps.training.services.tasks import encode_text


def input_ids(text: str, checkpoint: Checkpoint):
    """Characters for char_lm checkpoints, otherwise whitespace separated token ids."""
    if checkpoint.config.disable_soes:
        raise ContractError("checkpoint was trained without latent graphs")
    if checkpoint.meta.get('task', {}).get('task') == 'char_lm':
        return encode_text(text), list(text)
    try:
        ids = [int(part) for part in text.replace(',', ' ').split()]
    except ValueError:
        raise ContractError(f"expected whitespace separated token ids, got '{text}'") from None
    if not ids:
        raise ContractError("input text is empty")
    return np.array(ids), [str(i) for i in ids]


class Command(LabCommand):
    help = 'Run one forward pass and write the per-iteration latent graphs as a DOT digraph'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', type=str, required=True)
        parser.add_argument('--input-text', type=str, dest='input_text', required=True)
        parser.add_argument('--out', type=str, required=True, help='Output .dot path')

    def handle(self, *args, **options):
        checkpoint = self.resolve(load_checkpoint, options['checkpoint'])
        ids, labels = self.resolve(input_ids, options['input_text'], checkpoint)
        result = self.resolve(forward, ids, checkpoint.params, checkpoint.config)

        rows = [
            {key: row[key] for key in ('iteration', 'hidden_norm', 'mean_support', 'empty_rows')}
            for row in result.trace.summary()
        ]
        self.stdout.write(tabulate(rows, headers='keys', floatfmt='.4f'))
        self.stdout.write(f"mean edge drift {result.trace.drift:.6g}")
        path = self.perform(export_graph, result.trace, options['out'], labels)
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(result.trace)} iterations of {len(labels)} nodes to {path}"))
