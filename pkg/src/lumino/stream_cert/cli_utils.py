"""CLI utility functions for the stream certification toolkit"""
import math
from typing import Iterable, List, Optional, Sequence

import click
from lumino.stream_cert.error_handler import DomainError


class CLIUtils:
    """Utility functions for command-line interfaces"""

    @staticmethod
    def parse_grid(text: Optional[str], cast=float) -> Optional[List]:
        """
        Parse a comma-separated grid such as "0,0.25,0.5" or a range "start:stop:count"

        Args:
            text: Grid text, or None
            cast: Element type (float or int)

        Returns:
            List of values, or None when text is None
        """
        if text is None:
            return None
        text = text.strip()
        try:
            if ':' in text:
                start, stop, count = text.split(':')
                count = int(count)
                if count < 2:
                    raise DomainError(f"range grid needs at least 2 points, got {count}")
                start, stop = float(start), float(stop)
                return [cast(start + (stop - start) * k / (count - 1)) for k in range(count)]
            return [cast(part) for part in text.split(',') if part.strip()]
        except ValueError:
            raise DomainError(f"could not parse grid {text!r}")

    @staticmethod
    def _cell(value) -> str:
        if isinstance(value, float):
            return 'nan' if math.isnan(value) else f"{value:.6f}"
        return str(value)

    @staticmethod
    def echo_table(headers: Sequence[str], rows: Iterable[Sequence]) -> None:
        """Echo rows as an aligned plain-text table"""
        rendered = [[CLIUtils._cell(v) for v in row] for row in rows]
        widths = [max([len(h)] + [len(r[k]) for r in rendered]) for k, h in enumerate(headers)]
        click.echo('  '.join(h.rjust(width) for h, width in zip(headers, widths)))
        for row in rendered:
            click.echo('  '.join(cell.rjust(width) for cell, width in zip(row, widths)))

    @staticmethod
    def echo_checks(results) -> bool:
        """Echo one PASS/FAIL line per oracle check; True when all passed"""
        all_passed = True
        for result in results:
            status = "PASS" if result.passed else "FAIL"
            all_passed = all_passed and result.passed
            click.echo(f"{status}  {result.name}: {result.checked} checked, {result.failures} failed, "
                       f"worst {result.worst:.3g}")
        return all_passed
