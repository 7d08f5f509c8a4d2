import json

import pytest

from imagebake.bakery import ImageStore
from imagebake.runtime import Runtime, inspect_json

# Every manifest written and every instance launched anywhere in the session,
# for the suite-wide volume-free check.
AUDIT = {"manifests": [], "instances": []}
ACCEPTANCE = {}

_orig_put_manifest = ImageStore.put_manifest
_orig_launch = Runtime.launch


def _put_manifest(self, manifest):
    AUDIT["manifests"].append(manifest.dumps())
    return _orig_put_manifest(self, manifest)


def _launch(self, *args, **kwargs):
    c = _orig_launch(self, *args, **kwargs)
    AUDIT["instances"].append(c)
    return c


ImageStore.put_manifest = _put_manifest
Runtime.launch = _launch


def volume_free_violations():
    bad = []
    for text in AUDIT["manifests"]:
        if '"mounts": []' not in text or json.loads(text)["mounts"] != []:
            bad.append(text)
    for c in AUDIT["instances"]:
        text = inspect_json(c)
        if '"Mounts": []' not in text or json.loads(text)["Mounts"] != []:
            bad.append(text)
    return bad


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or report.outcome != "passed":
        # A criterion with several tests passes only if all of them pass.
        prev = ACCEPTANCE.get(number, (title, "passed"))[1]
        ACCEPTANCE[number] = (title, report.outcome if prev == "passed" else prev)


def pytest_sessionfinish(session, exitstatus):
    session.config._volume_violations = volume_free_violations()
    if session.config._volume_violations:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE and not AUDIT["manifests"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    bad = getattr(config, "_volume_violations", [])
    for number in sorted(ACCEPTANCE):
        title, outcome = ACCEPTANCE[number]
        ok = outcome == "passed" and not (number == 1 and bad)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}")
    tr.write_line(
        f"[{'PASS' if not bad else 'FAIL'}] suite-wide volume-free check: {len(AUDIT['manifests'])} manifests, "
        f"{len(AUDIT['instances'])} instances, {len(bad)} violations"
    )
