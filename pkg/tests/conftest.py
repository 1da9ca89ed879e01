import textwrap

import pytest

SMALL = textwrap.dedent("""\
    name: small
    seed: 3
    start: 2021-11-04T00:00:00Z
    duration_h: 26
    region:
      center: [17.4455, 78.3489]
      side_m: 2000
    field:
      baseline: {monsoon: 50, winter: 150, summer: 100}
      diurnal:
        - [20.0, 40.0]
      texture:
        length_scale_m: 300
        amplitude: 20
      events:
        - center: [17.4455, 78.3489]
          sigma_m: 400
          peak: 150
          start: 2021-11-04T18:00:00Z
          peak_time: 2021-11-04T20:30:00Z
          end: 2021-11-04T23:00:00Z
    deployment:
      layout: grid
      n: 9
    outages:
      per_device: 1
      max_hours: 2
    colocation:
      days: 1
    analysis:
      grid: 12x10
      subsets: [2, 4]
""")


@pytest.fixture
def small_scenario(tmp_path):
    path = tmp_path / "small.scenario"
    path.write_text(SMALL)
    return path


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
