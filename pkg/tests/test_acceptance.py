"""Acceptance suite: one printed pass/fail line per criterion.

The long simulations are run once per session and shared between criteria.
"""

import math
import random
import statistics
import time

import pytest

import oracles
from edgesched.calendar import Kind, seconds
from edgesched.config import ScenarioConfig
from edgesched.engine import Simulation
from edgesched.experiments import FULL_MATRIX, PAPER_MATRIX, run_matrix, seeded
from edgesched.metrics import render_json
from edgesched.scheduler import PreemptedAndAllocated, Reallocated, TaskState
from edgesched.trace import generate
from instances import T, Net, oracle_says, random_lp_instance

FRAMES = 1296
SEED = 0
BASE = ScenarioConfig()


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="session")
def paper_runs():
    began = time.perf_counter()
    reports = run_matrix(BASE, PAPER_MATRIX, frames=FRAMES, seed=SEED)
    return reports, time.perf_counter() - began


@pytest.fixture(scope="session")
def all_runs(paper_runs):
    extra = [c for c in FULL_MATRIX if c not in PAPER_MATRIX]
    reports = dict(paper_runs[0])
    reports.update(run_matrix(BASE, extra, frames=FRAMES, seed=SEED))
    return reports


def w4(**kw):
    return seeded(BASE, SEED).with_(scenario="weighted4", **kw)


@pytest.fixture(scope="session")
def instrumented_w4():
    """A weighted-4 preemption run that audits every HP call as it happens."""
    sim = Simulation(w4(), generate("weighted4", FRAMES, SEED))
    sched = sim.policy.scheduler
    cal = sim.calendar
    audit = {"calls": 0, "scan_breaches": [], "victims": 0, "victim_mismatches": []}
    allocate, select = sched.allocate_high_priority, sched.select_preemption_victim

    def allocate_hp(task, preemption, now):
        local = len(cal.device_reservations(task.source_device))
        out = allocate(task, preemption, now)
        scanned = sched.allocation_cost_counters().tasks_scanned
        audit["calls"] += 1
        if scanned > 3 * local:
            audit["scan_breaches"].append((task.id, scanned, local))
        return out

    def select_victim(device, window, cores_needed):
        pool = [(r.start, r.end, r.cores, r.owner) for r in cal.device_reservations(device)]
        lp = {i for i, t in sched.tasks.items() if not t.is_high}
        expected = oracles.farthest_deadline_victim(
            pool, lp, window, cal.device_capacity, {i: t.deadline for i, t in sched.tasks.items()},
            {i: t.arrival for i, t in sched.tasks.items()})
        got = select(device, window, cores_needed)
        audit["victims"] += 1
        if got != expected:
            audit["victim_mismatches"].append((got, expected))
        return got

    sched.allocate_high_priority = allocate_hp
    sched.select_preemption_victim = select_victim
    report = sim.run()
    return report, audit


# -- 1 ------------------------------------------------------------------------

def _sweep_violations(net, live):
    """Recheck the calendar from raw reservations, independent of its own bookkeeping."""
    bad = []
    link = sorted((r.start, r.end) for r in net.cal.link_reservations())
    for (s0, e0), (s1, e1) in zip(link, link[1:]):
        if s1 < e0:
            bad.append(f"link overlap [{s0},{e0}) [{s1},{e1})")
    for d in range(net.cal.n_devices):
        # ends sort before starts at the same instant: intervals are half-open
        edges = sorted(e for r in net.cal.device_reservations(d)
                       for e in ((r.start, r.cores), (r.end, -r.cores)))
        level = 0
        for _, delta in edges:
            level += delta
            if level > 4:
                bad.append(f"device {d} over capacity")
                break
    for tid in live:
        task = net.tasks[tid]
        by_kind = {r.kind: r for r in net.cal.reservations_of(tid)}
        proc, su = by_kind.get(Kind.PROCESSING), by_kind.get(Kind.STATE_UPDATE)
        if proc is None or su is None:
            continue
        alloc = by_kind.get(Kind.ALLOC_MSG)
        transfer = by_kind.get(Kind.IMAGE_TRANSFER)
        floor = transfer.end if transfer else (alloc.end if alloc else proc.start)
        if not (floor <= proc.start and proc.end <= su.start and su.end <= task.deadline):
            bad.append(f"task {tid} plan out of order")
    return bad


def _live_tasks(net):
    return {t.id for t in net.tasks.values() if t.state is TaskState.ALLOCATED}


def _drop_settled(net):
    """Forget tasks that no longer hold reservations so the registry stays small."""
    for tid in [i for i in net.tasks if not net.cal.reservations_of(i)]:
        del net.tasks[tid]


def test_criterion_1_randomized_invariants(say):
    rng = random.Random(1)
    net = Net(4)
    now = T
    violations, late, ops = [], 0, 10_000
    began = time.perf_counter()
    for op in range(ops):
        roll = rng.random()
        if roll < 0.3:
            now += rng.randint(0, seconds(3))
            for tid in _live_tasks(net):
                task = net.tasks[tid]
                su = [r for r in net.cal.reservations_of(tid) if r.kind is Kind.STATE_UPDATE]
                if su and su[0].end <= now:
                    late += su[0].end > task.deadline
                    net.sched.finish(task, su[0].end, TaskState.COMPLETED)
            net.cal.prune(now)
            _drop_settled(net)
        elif roll < 0.6:
            hp = net.hp(rng.randrange(4), now, budget=seconds(rng.uniform(1.0, 2.0)))
            out = net.sched.allocate_high_priority(hp, rng.random() < 0.7, now)
            if isinstance(out, PreemptedAndAllocated) and isinstance(out.victim_realloc, Reallocated):
                net.tasks[out.victim_task_id].state = TaskState.ALLOCATED
        elif roll < 0.95:
            request = net.request(rng.randint(1, 4), source=rng.randrange(4), now=now,
                                  deadline=now + seconds(rng.uniform(12, 40)))
            net.sched.allocate_low_priority_set(request, now)
        else:
            live = sorted(_live_tasks(net))
            if live:
                task = net.tasks[rng.choice(live)]
                net.sched.finish(task, now, TaskState.FAILED)
                net.cal.release_task(task.id, now)
        violations += _sweep_violations(net, _live_tasks(net))
        net.cal.check_invariants()
    elapsed = time.perf_counter() - began
    ok = not violations and late == 0 and elapsed < 10
    say(1, ok, f"{ops} ops, {len(violations)} invariant violations, {late} late completions, "
               f"{elapsed:.1f}s (limit 10s)")
    assert ok, violations[:5]


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(say, instrumented_w4):
    began = time.perf_counter()
    rng = random.Random(2)
    mismatches, feasible = 0, 0
    for _ in range(1000):
        net, request, now = random_lp_instance(rng)
        expected = oracle_says(net, request, now)
        plans = net.sched.allocate_low_priority_set(request, now)
        mismatches += all(p is not None for p in plans.values()) != expected
        feasible += expected
    victim_misses = 0
    for _ in range(1000):
        net = Net(2)
        for _ in range(rng.randint(1, 5)):
            start = T - seconds(rng.uniform(0, 3))
            try:
                net.lp(0, start, T + seconds(rng.uniform(0.1, 4)), cores=rng.choice([1, 2, 4]),
                       deadline=T + seconds(rng.choice([10, 20, 30])),
                       arrival=start - rng.randint(0, 3))
            except Exception:
                pass
        window = (T + 5043, T + 5043 + seconds(0.98))
        pool = [(r.start, r.end, r.cores, r.owner) for r in net.cal.device_reservations(0)]
        expected = oracles.farthest_deadline_victim(
            pool, set(net.tasks), window, 4, {i: t.deadline for i, t in net.tasks.items()},
            {i: t.arrival for i, t in net.tasks.items()})
        victim_misses += net.sched.select_preemption_victim(0, window, 1) != expected
    _, audit = instrumented_w4
    sim_misses = len(audit["victim_mismatches"])
    elapsed = time.perf_counter() - began
    ok = mismatches == 0 and victim_misses == 0 and sim_misses == 0 and elapsed < 60
    say(2, ok, f"LP {mismatches}/1000 mismatches ({feasible} feasible), victims "
               f"{victim_misses}/1000 random + {sim_misses}/{audit['victims']} in-run mismatches, "
               f"{elapsed:.1f}s (limit 60s)")
    assert ok


# -- 3 ------------------------------------------------------------------------

@pytest.fixture(scope="session")
def gaussian_w4():
    began = time.perf_counter()
    report = Simulation(w4(noise="gaussian"), generate("weighted4", FRAMES, SEED)).run()
    return report, time.perf_counter() - began


def test_criterion_3_hp_completion(say, paper_runs, gaussian_w4):
    reports, _ = paper_runs
    pre, nopre = reports["WPS_4"].hp_completion_rate, reports["WNPS_4"].hp_completion_rate
    noisy = gaussian_w4[0].hp_completion_rate
    ok = pre == 1.0 and noisy >= 0.97 and nopre <= 0.85
    say(3, ok, f"weighted4 HP completion: preemption {pre:.2%} (need 100%), gaussian "
               f"{noisy:.2%} (need >= 97%), no preemption {nopre:.2%} (need <= 85%)")
    assert ok


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_preemption_ordering(say, all_runs):
    pairs = [("uniform", "UPS", "UNPS", False)] + [
        (f"weighted{x}", f"WPS_{x}", f"WNPS_{x}", x >= 3) for x in (1, 2, 3, 4)]
    ok, parts = True, []
    for name, p, n, strict in pairs:
        a, b = all_runs[p].frame_completion_rate, all_runs[n].frame_completion_rate
        good = a > b if strict else a >= b
        ok &= good
        parts.append(f"{name} {a:.4f} vs {b:.4f}{'' if good else ' (!)'}")
    say(4, ok, "frame completion P vs NP: " + ", ".join(parts))
    assert ok


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_algorithm_ordering(say, paper_runs):
    r, _ = paper_runs
    ok, parts = True, []
    for setting, s, c, d in (("P", "WPS_4", "CPW", "DPW"), ("NP", "WNPS_4", "CNPW", "DNPW")):
        fs, fc, fd = (r[k].frame_completion_rate for k in (s, c, d))
        good = fs > fc > fd
        ok &= good
        parts.append(f"{setting}: scheduler {fs:.4f} > centralized {fc:.4f} > decentralized "
                     f"{fd:.4f} {'holds' if good else 'does not hold'}")
    say(5, ok, "weighted4 " + "; ".join(parts))
    assert ok


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_per_request_penalty(say, paper_runs):
    r, _ = paper_runs
    pre, nopre = r["UPS"].per_request_completion_mean, r["UNPS"].per_request_completion_mean
    ok = nopre > pre
    say(6, ok, f"uniform per-request completion: no preemption {nopre:.4f} vs preemption {pre:.4f}")
    assert ok


# -- 7 ------------------------------------------------------------------------

def test_criterion_7_realloc_scarcity(say, all_runs):
    ok, parts = True, []
    for x in (1, 2, 3, 4):
        rep = all_runs[f"WPS_{x}"]
        total = rep.realloc_success + rep.realloc_failure
        rate = rep.realloc_success / total if total else math.nan
        good = total > 0 and rate < 0.02
        ok &= good
        parts.append(f"weighted{x} {rep.realloc_success}/{total}")
    say(7, ok, "realloc successes (need < 2%): " + ", ".join(parts))
    assert ok


# -- 8 ------------------------------------------------------------------------

def test_criterion_8_four_core_skew(say, paper_runs):
    rep = paper_runs[0]["WPS_4"]
    hist = rep.core_allocation_histogram
    allocs = sum(hist.values())
    share = (hist["local_4"] + hist["offloaded_4"]) / allocs
    hit = rep.preempted_by_config["4"] / rep.preemptions if rep.preemptions else 0.0
    ok = rep.preemptions > 0 and hit > share
    say(8, ok, f"weighted4: {rep.preempted_by_config['4']}/{rep.preemptions} preemptions hit "
               f"4-core tasks ({hit:.3f}) vs 4-core allocation share {share:.3f}")
    assert ok


# -- 9 ------------------------------------------------------------------------

def _probes_for(n_tasks):
    """Probes for a 2-task request against ``n_tasks`` saturating 2-core tasks."""
    net = Net(4)
    per_device = n_tasks // 4
    length = seconds(11.611)
    for d in range(4):
        for k in range(per_device):
            start = T + (k // 2) * length
            net.lp(d, start, start + length, cores=2, deadline=T + seconds(1000))
    request = net.request(2, source=0, now=T, deadline=T + seconds(400))
    net.sched.allocate_low_priority_set(request, T)
    return net.sched.allocation_cost_counters().windows_probed


def test_criterion_9_complexity_counters(say, instrumented_w4):
    _, audit = instrumented_w4
    sizes = (8, 16, 32, 64)
    probes = [_probes_for(n) for n in sizes]
    xs, ys = [math.log(n) for n in sizes], [math.log(p) for p in probes]
    slope = statistics.linear_regression(xs, ys).slope
    breaches = audit["scan_breaches"]
    ok = not breaches and audit["calls"] > 0 and slope <= 2.2
    say(9, ok, f"HP scans over 3x local on {len(breaches)}/{audit['calls']} calls; LP probes "
               f"{dict(zip(sizes, probes))}, log-log slope {slope:.2f} (limit 2.2)")
    assert ok


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_desk_scale(say, paper_runs, gaussian_w4):
    _, matrix_s = paper_runs
    single_s = gaussian_w4[1]
    ok = matrix_s < 120 and single_s < 10
    say(10, ok, f"8-cell matrix {matrix_s:.1f}s (limit 120s), single run {single_s:.1f}s (limit 10s)")
    assert ok


# -- 11 -----------------------------------------------------------------------

def test_criterion_11_determinism(say, paper_runs):
    reports, _ = paper_runs
    cells = {c.label: c for c in PAPER_MATRIX}
    same = []
    for label in ("UPS", "WNPS_4", "DPW"):
        cell = cells[label]
        config = seeded(BASE, SEED).with_(scenario=cell.scenario, algorithm=cell.algorithm,
                                          preemption=cell.preemption)
        again = Simulation(config, generate(cell.scenario, FRAMES, SEED)).run()
        same.append(render_json(again).encode() == render_json(reports[label]).encode())
    ok = all(same)
    say(11, ok, f"byte-identical report.json on {sum(same)}/3 scenarios (UPS, WNPS_4, DPW)")
    assert ok
