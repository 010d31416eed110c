import subprocess
import sys

import pytest

from lattix import __version__
from lattix.cli import main
from lattix.generate import read_refs
from lattix.lattice import read_lattice


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["generate", "--states", "30", "--arcs", "100", "--frames", "8", "--utts", "3",
                 "--seed", "4", "--out", str(out)]) == 0
    return out


class TestGenerate:
    def test_files(self, corpus_dir):
        names = {p.name for p in corpus_dir.iterdir()}
        assert {"graph.fst", "manifest.txt", "refs.txt", "corpus.json", "utt0002.lxp"} <= names

    def test_deterministic(self, corpus_dir, tmp_path):
        main(["generate", "--states", "30", "--arcs", "100", "--frames", "8", "--utts", "3",
              "--seed", "4", "--out", str(tmp_path)])
        for name in ("graph.fst", "utt0000.lxp", "refs.txt"):
            assert (tmp_path / name).read_bytes() == (corpus_dir / name).read_bytes()

    def test_bad_epsilon_frac(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as info:
            main(["generate", "--states", "3", "--arcs", "3", "--frames", "2", "--utts", "1",
                  "--epsilon-frac", "1.5", "--out", str(tmp_path)])
        assert info.value.code == 2


class TestDecode:
    def _decode(self, corpus_dir, out, *extra):
        return main(["decode", "--graph", str(corpus_dir / "graph.fst"), "--list", str(corpus_dir / "manifest.txt"),
                     "--out", str(out), "--refs", str(corpus_dir / "refs.txt"), "--metrics", str(out / "m.csv"), *extra])

    def test_defaults(self, corpus_dir, tmp_path):
        assert self._decode(corpus_dir, tmp_path) == 0
        lines = (tmp_path / "transcripts.txt").read_text().splitlines()
        assert [line.split()[0] for line in lines] == ["utt0000", "utt0001", "utt0002"]
        lat = read_lattice((tmp_path / "utt0001.lat").read_text())
        assert lat.num_arcs > 0
        header = (tmp_path / "m.csv").read_text().splitlines()[0]
        assert header == "utt_id,wer,ower,density,best_cost"

    def test_engines_agree_unpruned(self, corpus_dir, tmp_path):
        flags = ("--beam", "inf", "--max-active", "inf")
        assert self._decode(corpus_dir, tmp_path / "p", "--engine", "parallel", *flags) == 0
        assert self._decode(corpus_dir, tmp_path / "s", "--engine", "serial", *flags) == 0
        assert read_refs(tmp_path / "p" / "transcripts.txt") == read_refs(tmp_path / "s" / "transcripts.txt")

    def test_positional_inputs(self, corpus_dir, tmp_path):
        rc = main(["decode", "--graph", str(corpus_dir / "graph.fst"), str(corpus_dir / "utt0000.lxp"),
                   "--out", str(tmp_path), "--nlanes", "2", "--nchannels", "4"])
        assert rc == 0
        assert (tmp_path / "utt0000.lat").exists()

    def test_missing_graph(self, tmp_path, capsys):
        rc = main(["decode", "--graph", str(tmp_path / "nope.fst"), "x.lxp", "--out", str(tmp_path)])
        assert rc == 2
        assert "graph file not found" in capsys.readouterr().err

    def test_unreadable_posteriors(self, corpus_dir, tmp_path, capsys):
        bad = tmp_path / "bad.lxp"
        bad.write_bytes(b"junk")
        rc = main(["decode", "--graph", str(corpus_dir / "graph.fst"), str(bad), str(corpus_dir / "utt0000.lxp"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        assert (tmp_path / "o" / "utt0000.lat").exists()


class TestBench:
    def test_throughput_csv(self, corpus_dir, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["bench", "throughput", "--corpus", str(corpus_dir), "--grid", "1:3,2:3",
                     "--repeats", "1", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "config,wall_clock,xrtf" and len(lines) == 3

    def test_beam_sweep_stdout(self, corpus_dir, capsys):
        assert main(["bench", "beam-sweep", "--corpus", str(corpus_dir), "--beams", "5,8", "--repeats", "1"]) == 0
        assert capsys.readouterr().out.splitlines()[0] == "beam,wall_clock,wer"


def test_version():
    out = subprocess.run([sys.executable, "-m", "lattix", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert __version__ in out.stdout
