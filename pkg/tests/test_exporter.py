from unittest import TestCase, mock
from tempfile import TemporaryDirectory
import json
import os

import numpy as np

from jdflow.exporter import Exporter, to_csv_text, to_jsonl_line
from jdflow.models.noise import RegionEnum


class TestFormats(TestCase):
    def test_jsonl_line(self):
        line = to_jsonl_line({"b": np.float64(0.5), "a": np.arange(2), "pass": np.bool_(True)})
        self.assertEqual(line, '{"a": [0, 1], "b": 0.5, "pass": true}')
        self.assertEqual(json.loads(to_jsonl_line({"region": RegionEnum.LARGE}))["region"], RegionEnum.LARGE.value)

    def test_csv_text(self):
        text = to_csv_text(["t", "x", "note"], [[0.1, np.float64(1 / 3), None], [1, 2.0, "a,b"]])
        self.assertEqual(text, 't,x,note\n0.1,0.3333333333333333,\n1,2.0,"a,b"\n')


class TestExporter(TestCase):
    def test_artifacts(self):
        with TemporaryDirectory() as tmpdir:
            exporter = Exporter(os.path.join(tmpdir, "out"))
            self.assertEqual(exporter.write_jsonl("a.jsonl", [{"k": 1}, {"k": 2}]), 2)
            exporter.write_csv("b.csv", ["x"], [[1.5]])
            exporter.write_text("c.txt", "hello\n")
            exporter.write_csv("b.csv", ["x"], [[2.5]])

            self.assertEqual(exporter.artifacts, ["a.jsonl", "b.csv", "c.txt"])
            self.assertEqual(exporter.file("a.jsonl").read(), '{"k": 1}\n{"k": 2}\n')
            self.assertEqual(exporter.file("b.csv").read(), "x\n2.5\n")
            self.assertFalse(os.path.exists(os.path.join(tmpdir, "out", "b.csv.tmp")))

    def test_manifest_is_deterministic(self):
        with TemporaryDirectory() as tmpdir:
            texts = []
            for name in ("one", "two"):
                exporter = Exporter(os.path.join(tmpdir, name))
                exporter.write_jsonl("z.jsonl", [])
                exporter.register("a.csv")
                exporter.write_manifest("probe", "abc", 7, False)
                texts.append(exporter.file(Exporter.MANIFEST_FILE).read())

        self.assertEqual(texts[0], texts[1])
        manifest = json.loads(texts[0])
        self.assertEqual(manifest["artifacts"], ["a.csv", "z.jsonl"])
        self.assertEqual(manifest["config_hash"], "abc")
        self.assertFalse(manifest["pass"])
        self.assertEqual(set(manifest["versions"]), {"jdflow", "python", "numpy", "scipy", "pydantic", "attrs", "psutil"})

    @mock.patch("time.time", return_value=1000)
    def test_run_info(self, *args):
        with TemporaryDirectory() as tmpdir:
            exporter = Exporter(tmpdir)
            exporter.write_run_info(4)
            info = json.loads(exporter.file(Exporter.RUN_INFO_FILE).read())

        self.assertEqual(info["start_ts"], 1000)
        self.assertEqual(info["duration"], 0)
        self.assertEqual(info["threads"], 4)
        self.assertGreater(info["system"]["cpu_count"], 0)
