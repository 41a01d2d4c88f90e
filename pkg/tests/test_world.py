from __future__ import annotations

import random

import pytest

from flowreplay.core import ActionTemplate, ActivityInstance
from flowreplay.world import (
    AlreadySubmitted,
    ElementDisabled,
    ElementNotFound,
    ElementSpec,
    MissingRequired,
    PageSpec,
    UnknownPage,
    WorldError,
    WorldSpec,
    apply,
    apply_event,
    fingerprint,
    initial_state,
    perturb,
    signature_of,
)

from .worldgen import make_demo, make_world


def form_world(date_needs_gate=False):
    elements = (
        ElementSpec("fld_name", "name", "text_field"),
        ElementSpec("fld_gate", "gate", "text_field"),
        ElementSpec(
            "fld_date",
            "date",
            "text_field",
            enabled_when=frozenset({("Type", "gate")}) if date_needs_gate else frozenset(),
        ),
        ElementSpec("btn_submit", "submit", "button"),
        ElementSpec("lnk_confirm", "confirm", "link"),
    )
    pages = (
        PageSpec("form", elements, nav_links=(("lnk_confirm", "confirm"),)),
        PageSpec("confirm", (ElementSpec("btn_back", "back", "button"),)),
    )
    return WorldSpec(pages=pages, start_page="form")


def act(kind, role, element_id, **args):
    return ActivityInstance(ActionTemplate(kind, role, element_id), tuple(args.items()))


def test_type_writes_field_and_advances_tick():
    world = form_world()
    s0 = initial_state(world)
    s1 = apply(s0, act("Type", "gate", "fld_gate", text="A12"), world)
    assert s1.value_of("fld_gate") == "A12"
    assert s1.tick == s0.tick + 1
    assert ("Type", "gate") in s1.completed
    assert s0.value_of("fld_gate") is None  # input untouched


def test_click_on_link_navigates():
    world = form_world()
    s1 = apply(initial_state(world), act("Click", "confirm", "lnk_confirm"), world)
    assert s1.current_page == "confirm"
    assert s1.focused is None


def test_enabled_when_gates_the_element():
    world = form_world(date_needs_gate=True)
    s0 = initial_state(world)

    def oracle_enabled(state, element_id):
        el = world.page("form").element(element_id)
        return el.enabled_when <= state.completed

    assert not oracle_enabled(s0, "fld_date")
    with pytest.raises(ElementDisabled):
        apply(s0, act("Type", "date", "fld_date", text="2025-06-01"), world)
    s1 = apply(s0, act("Type", "gate", "fld_gate", text="A12"), world)
    assert oracle_enabled(s1, "fld_date")
    s2 = apply(s1, act("Type", "date", "fld_date", text="2025-06-01"), world)
    assert s2.value_of("fld_date") == "2025-06-01"


def test_unknown_element_and_page():
    world = form_world()
    s0 = initial_state(world)
    with pytest.raises(ElementNotFound):
        apply(s0, act("Click", "nope", "missing"), world)
    with pytest.raises(UnknownPage):
        apply(s0, ActivityInstance(ActionTemplate("Navigate", "nowhere")), world)


def test_submit_requires_required_fields():
    elements = (
        ElementSpec("f1", "name", "text_field", required=True),
        ElementSpec("go", "submit", "button"),
    )
    world = WorldSpec((PageSpec("p", elements),), "p")
    s0 = initial_state(world)
    with pytest.raises(MissingRequired):
        apply(s0, act("Submit", "submit", "go"), world)
    s1 = apply(s0, act("Type", "name", "f1", text="x"), world)
    s2 = apply(s1, act("Submit", "submit", "go"), world)
    assert s2.submitted
    with pytest.raises(AlreadySubmitted):
        apply(s2, act("Submit", "submit", "go"), world)


def test_apply_is_pure_and_errors_leave_state_intact():
    world = form_world(date_needs_gate=True)
    s0 = initial_state(world)
    action = act("Type", "gate", "fld_gate", text="A12")
    assert apply(s0, action, world) == apply(s0, action, world)
    before = s0
    with pytest.raises(WorldError):
        apply(s0, act("Type", "date", "fld_date", text="x"), world)
    assert s0 == before and s0.tick == 0


def test_completed_set_grows_monotonically():
    rng = random.Random(7)
    world = make_world(rng)
    script, _ = make_demo(rng, world)
    state = initial_state(world)
    seen = frozenset()
    for step in script.steps:
        target = step.target_element if step.action_kind != "keypress" else None
        state = apply_event(
            state, step.action_kind, target or state.focused, dict(step.params), world
        )
        assert seen <= state.completed
        seen = state.completed


# -- signatures ---------------------------------------------------------------


def test_fresh_signature_is_empty():
    world = form_world()
    sig = signature_of(initial_state(world))
    assert sig.page == "form" and sig.completed == frozenset() and sig.focused is None


def test_signature_after_two_types():
    world = form_world()
    s = initial_state(world)
    s = apply(s, act("Type", "name", "fld_name", text="Bob"), world)
    s = apply(s, act("Type", "gate", "fld_gate", text="A12"), world)
    assert signature_of(s).completed == {("Type", "name"), ("Type", "gate")}


def test_commuting_pair_yields_equal_signatures():
    # Brute force both orders of a type and a plain button click.
    world = form_world()
    a = act("Type", "name", "fld_name", text="Bob")
    b = act("Click", "submit", "btn_submit")
    s_ab = apply(apply(initial_state(world), a, world), b, world)
    s_ba = apply(apply(initial_state(world), b, world), a, world)
    assert signature_of(s_ab) == signature_of(s_ba)


def test_signature_is_pure():
    world = form_world()
    s = apply(initial_state(world), act("Type", "name", "fld_name", text="x"), world)
    assert signature_of(s) == signature_of(s)


# -- fingerprints and perturbations -------------------------------------------


def test_fingerprint_deterministic():
    assert fingerprint(form_world()) == fingerprint(form_world())


def test_rename_ids_keeps_roles_and_role_digest():
    world = form_world()
    renamed = perturb(world, "rename_ids")
    assert renamed.page("form").element("fld_gate_v2").role == "gate"
    before, after = fingerprint(world), fingerprint(renamed)
    assert before.digest != after.digest
    assert before.role_digest == after.role_digest
    # nav links follow the renamed ids
    assert renamed.page("form").nav_target("lnk_confirm_v2") == "confirm"


def test_reorder_changes_both_digests_and_is_involution():
    world = form_world()
    reordered = perturb(world, "reorder_elements")
    before, after = fingerprint(world), fingerprint(reordered)
    assert before.digest != after.digest
    assert before.role_digest != after.role_digest
    assert perturb(reordered, "reorder_elements") == world


def test_options_only_on_selects():
    with pytest.raises(WorldError):
        WorldSpec(
            (PageSpec("p", (ElementSpec("e", "r", "text_field", options=("a",)),)),), "p"
        ).validate()
