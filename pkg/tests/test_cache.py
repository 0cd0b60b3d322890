from unittest import TestCase, mock
import os
import tempfile

from jdflow.cache import Cache
from jdflow.fs import remove_path


class TestCache(TestCase):
    def test_cache(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            cache = Cache(tmpdir)
            cache.set("key", "value")
            self.assertEqual(cache.get("key"), "value")
            self.assertEqual(cache.get("key", expires=-1), "value")
            self.assertEqual(cache.get("missing"), None)

            with mock.patch("os.path.getmtime", return_value=100), mock.patch(
                "time.time", return_value=110
            ):
                self.assertEqual(cache.get("key", expires=9), None)
                self.assertEqual(cache.get("key", default=..., expires=9), ...)
                self.assertEqual(cache.get("key", expires=10), "value")
                self.assertEqual(cache.get("key", expires=11), "value")

            self.assertEqual(cache.purge(), 1)
            self.assertEqual(os.listdir(tmpdir), [])
            self.assertEqual(cache.purge(), 0)

    def test_tuple_keys(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            cache = Cache(tmpdir)
            cache.set(("value_grid", "abc"), [1.0, 2.0])
            self.assertEqual(cache.get(("value_grid", "abc")), [1.0, 2.0])
            self.assertEqual(cache.get(("value_grid", "abd")), None)

    def test_get_or_compute(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            cache = Cache(tmpdir)
            calls = []

            def compute():
                calls.append(1)
                return len(calls)

            self.assertEqual(cache.get_or_compute("key", compute), 1)
            self.assertEqual(cache.get_or_compute("key", compute), 1)
            self.assertEqual(len(calls), 1)

            with mock.patch("os.path.getmtime", return_value=100), mock.patch(
                "time.time", return_value=111
            ):
                self.assertEqual(cache.get_or_compute("key", compute, expires=10), 2)

            # a cached None is a hit, not a miss
            cache.set("none", None)
            self.assertEqual(cache.get_or_compute("none", compute), None)
            self.assertEqual(len(calls), 2)


class TestRemovePath(TestCase):
    def test_parent(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            target = os.path.join(tmpdir, "cache")
            os.makedirs(os.path.join(target, "nested"))
            with open(os.path.join(target, "a"), "w") as f:
                f.write("a")

            self.assertEqual(remove_path(target), 1)
            self.assertEqual(os.listdir(target), ["nested"])
            os.rmdir(os.path.join(target, "nested"))
            self.assertEqual(remove_path(target, parent=True), 0)
            self.assertFalse(os.path.exists(target))
            self.assertEqual(remove_path(target), 0)
