"""Scenario scripts and their structured reports."""

import json

import pytest

from ccxsim import fixtures
from ccxsim.scenario import ScenarioRunner, run_scenario

from helpers import small_config


@pytest.fixture
def demo_dir(tmp_path):
    fixtures.write_demo_tree(tmp_path)
    return tmp_path


def runner(**kw):
    return ScenarioRunner(small_config(granule_count=1024, epc_base=32, epc_size=512), **kw)


def run_text(text, base_dir, **kw):
    r = runner(**kw)
    r.base_dir = base_dir
    return r.run_text(text)


# ---------------------------------------------------------------------------


def test_lifecycle_scenario_passes(demo_dir):
    result = run_scenario(demo_dir / "lifecycle.scenario",
                          config=small_config(granule_count=1024, epc_size=512))
    assert result.ok
    assert result.summary["counters"]["ECREATE"] == 1
    assert result.summary["counters"]["EENTER"] >= 3


def test_seal_unseal_scenario_passes(demo_dir):
    result = run_scenario(demo_dir / "seal_unseal.scenario",
                          config=small_config(granule_count=2048, epc_size=1024))
    assert result.ok


def test_attest_scenario_passes(demo_dir):
    result = run_scenario(demo_dir / "attest.scenario",
                          config=small_config(granule_count=1024, epc_size=512))
    assert result.ok


def test_failing_expect_aborts_with_position(demo_dir):
    text = (
        "create app standard.manifest\n"
        "ecall app 0 1 7 0\n"
        "expect last == 8\n"
        "ecall app 0 1 9 0\n"
    )
    result = run_text(text, demo_dir)
    assert not result.ok
    assert result.summary["failed_at"] == 3
    assert "expectation failed" in result.summary["failure"]
    assert "state_snapshot" in result.summary
    # nothing past the failure executed
    assert result.events[-1]["line"] == 3


def test_unknown_entity_reported(demo_dir):
    result = run_text("ecall ghost 0 1\n", demo_dir)
    assert not result.ok
    assert "unknown enclave" in result.summary["failure"]


def test_enclave_fault_aborts_scenario_with_report(demo_dir):
    # selector 9 is undefined in the fixture program and aborts
    result = run_text("create app standard.manifest\necall app 0 9 0 0\n", demo_dir)
    assert not result.ok
    assert result.summary["failed_at"] == 2
    assert "EnclaveFault" in result.summary["failure"]
    assert "abort" in result.summary["failure"]


def test_parse_error_reports_line(demo_dir):
    result = run_text("create app standard.manifest\nfrobnicate\n", demo_dir)
    assert not result.ok
    assert result.summary["failed_at"] == 2


def test_mode_directive_and_override(demo_dir):
    text = "mode ccx\ncreate app standard.manifest\n"
    result = run_text(text, demo_dir)
    assert result.machine.config.mode == "ccx"
    result = run_text(text, demo_dir, mode_override="sgx")
    assert result.machine.config.mode == "sgx"


def test_mode_after_create_rejected(demo_dir):
    text = "create app standard.manifest\nmode ccx\n"
    result = run_text(text, demo_dir)
    assert not result.ok


def test_ocall_roundtrip_in_scenario(demo_dir):
    text = (
        "create app standard.manifest\n"
        "ecall app 0 3 10 20\n"
        "expect last == 45\n"  # host computes 2*10 + 20 + 5
    )
    assert run_text(text, demo_dir).ok


def test_inject_irq_applies_to_next_ecall(demo_dir):
    text = (
        "create c compute.manifest\n"
        "inject_irq vcpu=0 at=every\n"
        f"ecall c 0 0 165 0\n"
        f"expect last == {fixtures.compute_expected(165)}\n"
        "expect count:ERESUME >= 900\n"
    )
    assert run_text(text, demo_dir).ok


def test_swap_commands_and_counters(demo_dir):
    text = (
        "create app standard.manifest\n"
        f"swap_out app {fixtures.SCRATCH_OFF:#x}\n"
        "expect count:EWB == 1\n"
        "expect swap_out_events == 1\n"
        f"swap_in app {fixtures.SCRATCH_OFF:#x}\n"
        "expect count:ELDU == 1\n"
        "ecall app 0 1 5 0\n"
        "expect last == 5\n"
    )
    assert run_text(text, demo_dir).ok


def test_mrenclave_eq_probe(demo_dir):
    text = (
        "create a standard.manifest\n"
        "create b standard.manifest\n"
        "expect mrenclave_eq a b\n"
    )
    assert run_text(text, demo_dir).ok
    text2 = (
        "create a standard.manifest\n"
        "create b standard_b.manifest\n"
        "expect mrenclave_eq a b\n"
    )
    assert not run_text(text2, demo_dir).ok


def test_report_is_deterministic_jsonl(demo_dir):
    cfg = small_config(granule_count=1024, epc_size=512)
    r1 = run_scenario(demo_dir / "lifecycle.scenario", config=cfg)
    cfg2 = small_config(granule_count=1024, epc_size=512)
    r2 = run_scenario(demo_dir / "lifecycle.scenario", config=cfg2)
    assert r1.to_jsonl() == r2.to_jsonl()
    for line in r1.to_jsonl().strip().splitlines():
        json.loads(line)  # every record is a valid JSON document


def test_mode_differential_functional_equivalence(demo_dir):
    """Same script in both modes: identical command results, different swap
    activity."""
    text = (
        "create t toucher.manifest\n"
        "ecall t 0 1 96 0\n"
        f"expect last == {fixtures.toucher_expected(96)}\n"
    )
    results = {}
    for mode in ("sgx", "ccx"):
        r = runner(mode_override=mode)
        r.base_dir = demo_dir
        r.config = small_config(granule_count=2048, epc_base=32, epc_size=48,
                                mode=mode)
        results[mode] = r.run_text(text)
        assert results[mode].ok
    functional = lambda res: [
        (e["cmd"], e.get("result")) for e in res.events if e["cmd"] != "expect"
    ]
    assert functional(results["sgx"]) == functional(results["ccx"])
    assert results["sgx"].summary["counters"]["EWB"] >= 96 - 48
    assert results["ccx"].summary["counters"]["EWB"] == 0
    assert results["ccx"].summary["swap_out_events"] == 0


def test_shared_untrusted_buffer_carries_rich_payloads(demo_dir):
    """The call ABI moves big payloads through a host buffer whose address
    rides in an argument word; enclave code reads it in place."""
    from ccxsim.machine import Machine
    from ccxsim.memory import GRANULE_SIZE
    from ccxsim.manifest import EnclaveManifest
    from ccxsim.runtime import HostRuntime

    machine = Machine(small_config(granule_count=1024, epc_size=512))
    rt = HostRuntime(machine)
    h = rt.load_enclave(EnclaveManifest.load(demo_dir / "standard.manifest"))
    buffer_granule = rt.take_host_granule()
    machine.host_write(buffer_granule, 0, (0x1122334455667788).to_bytes(8, "little"))
    value = rt.ecall(h, 0, fixtures.SEL_PEEK, buffer_granule * GRANULE_SIZE)
    assert value == 0x1122334455667788
    # and the enclave can answer through the same buffer
    rt.ecall(h, 0, fixtures.SEL_POKE, buffer_granule * GRANULE_SIZE + 8, 99)
    assert machine.host_read(buffer_granule, 8, 8) == (99).to_bytes(8, "little")


def test_ocall_handlers_cannot_reach_enclave_memory(demo_dir):
    """A curious host handler takes a protection fault like any other host
    software, and the fault is on the record."""
    from ccxsim.errors import GranuleProtectionFault
    from ccxsim.machine import Machine
    from ccxsim.memory import GRANULE_SIZE
    from ccxsim.manifest import EnclaveManifest
    from ccxsim.runtime import HostRuntime

    machine = Machine(small_config(granule_count=1024, epc_size=512))
    rt = HostRuntime(machine)
    h = rt.load_enclave(EnclaveManifest.load(demo_dir / "standard.manifest"))
    code_granule = machine.memory.find_page(h.eid, h.base)

    def nosy_handler(ctx, a, b):
        return int.from_bytes(ctx.read(code_granule * GRANULE_SIZE, 8), "little")

    rt.register_ocall(fixtures.OCALL_HOSTADD, nosy_handler)
    log_before = len(machine.memory.gpf_log)
    with pytest.raises(GranuleProtectionFault):
        rt.ecall(h, 0, fixtures.SEL_OCALL_ROUNDTRIP, 1, 2)
    assert len(machine.memory.gpf_log) == log_before + 1
    assert machine.memory.gpf_log[-1].granule == code_granule


def test_tcs_evicted_during_ocall_is_reloaded(demo_dir):
    """An outside call leaves the thread's TCS idle; if the swap manager
    evicts it meanwhile, the driver restores it before re-entry."""
    from ccxsim.machine import Machine
    from ccxsim.manifest import EnclaveManifest
    from ccxsim.runtime import HostRuntime

    machine = Machine(small_config(granule_count=1024, epc_size=512))
    rt = HostRuntime(machine)
    h = rt.load_enclave(EnclaveManifest.load(demo_dir / "standard.manifest"))
    tcs_vaddr = h.tcs_vaddrs[0]

    def evicting_handler(ctx, a, b):
        ctx.runtime.swap_out(h, tcs_vaddr)
        return a + b

    rt.register_ocall(fixtures.OCALL_HOSTADD, evicting_handler)
    assert rt.ecall(h, 0, fixtures.SEL_OCALL_ROUNDTRIP, 20, 30) == 50
    assert rt.swap_in_events >= 1  # the TCS came back through the reload path


def test_swap_store_directory_and_tamper(demo_dir, tmp_path):
    store_dir = tmp_path / "swapstore"
    r = runner(swap_dir=store_dir)
    r.base_dir = demo_dir
    result = r.run_text(
        "create app standard.manifest\n"
        f"swap_out app {fixtures.SCRATCH_OFF:#x}\n"
    )
    assert result.ok
    blobs = sorted(store_dir.glob("*.blob"))
    assert len(blobs) == 1
    doc = json.loads(blobs[0].read_text())
    ct = bytearray(bytes.fromhex(doc["ciphertext"]))
    ct[77] ^= 1
    doc["ciphertext"] = bytes(ct).hex()
    blobs[0].write_text(json.dumps(doc))
    rt = result.runtime
    rt.store.refresh_from_directory()
    handle = next(iter(rt.handles.values()))
    from ccxsim.errors import SgxError, SgxErrorCode

    with pytest.raises(SgxError) as exc:
        rt.swap_in(handle, handle.base + fixtures.SCRATCH_OFF)
    assert exc.value.code == SgxErrorCode.MAC_COMPARE_FAIL
