import numpy as np
import pytest

HEADER = "session.ID\tMessage.ID\tMessage.Timestamp\tMessage.from\tMessage.Text\tDialogue_Act\n"

USER_LINES = [
    "request(moviename; genre=thriller; starttime=tonight)",
    "inform(city=seattle; date=friday)",
    "request(theater; moviename=batman)",
    "thanks()",
]
AGENT_LINES = [
    "inform(moviename={The Witch, The Boy}; genre=thriller) multiple_choice(moviename)",
    "request(date; starttime)",
    "confirm_question()",
    "inform(theater=regal; starttime=4:40 pm)",
]


def write_msr_tsv(directory, domain="movie", n_sessions=20, seed=0):
    """A small file in the MSR challenge layout, with alternating speakers."""
    rng = np.random.default_rng(seed)
    rows = [HEADER]
    for sid in range(1, n_sessions + 1):
        for m in range(int(rng.integers(2, 6))):
            speaker = "user" if m % 2 == 0 else "agent"
            pool = USER_LINES if speaker == "user" else AGENT_LINES
            acts = pool[int(rng.integers(len(pool)))]
            rows.append(f"{sid}\t{m + 1}\t01/01/2017 00:00\t{speaker}\ttext {m}\t{acts}\n")
    path = directory / f"{domain}_all.tsv"
    path.write_text("".join(rows), encoding="utf-8")
    return path


@pytest.fixture
def msr_dir(tmp_path):
    d = tmp_path / "msr"
    d.mkdir()
    write_msr_tsv(d)
    return d
