"""Deterministic simulated form/page world.

Stands in for the real applications a workflow agent would drive. Worlds are
static, declarative JSON documents; environment transitions are pure
functions over value-semantic states, so a replay is reproducible bit for
bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from .core import (
    ActionTemplate,
    ActivityInstance,
    FlowReplayError,
    Fingerprint,
    MalformedTrace,
    StateSignature,
    TemplateKey,
    key_str,
    parse_key,
)

ELEMENT_KINDS = frozenset({"button", "text_field", "select", "link"})


class WorldError(FlowReplayError):
    """Base class for environment transition errors."""


class UnknownPage(WorldError):
    pass


class ElementNotFound(WorldError):
    pass


class ElementDisabled(WorldError):
    pass


class AlreadySubmitted(WorldError):
    pass


class MissingRequired(WorldError):
    """Submit attempted while a required field is still empty."""


@dataclass(frozen=True)
class ElementSpec:
    element_id: str
    role: str
    kind: str
    options: tuple[str, ...] = ()
    sensitive: bool = False
    required: bool = False
    enabled_when: frozenset[TemplateKey] = frozenset()

    def to_dict(self) -> dict:
        d: dict = {"element_id": self.element_id, "role": self.role, "kind": self.kind}
        if self.options:
            d["options"] = list(self.options)
        if self.sensitive:
            d["sensitive"] = True
        if self.required:
            d["required"] = True
        if self.enabled_when:
            d["enabled_when"] = sorted(key_str(k) for k in self.enabled_when)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ElementSpec":
        return cls(
            element_id=d["element_id"],
            role=d["role"],
            kind=d["kind"],
            options=tuple(d.get("options", ())),
            sensitive=bool(d.get("sensitive", False)),
            required=bool(d.get("required", False)),
            enabled_when=frozenset(parse_key(k) for k in d.get("enabled_when", ())),
        )


@dataclass(frozen=True)
class PageSpec:
    page_id: str
    elements: tuple[ElementSpec, ...] = ()
    nav_links: tuple[tuple[str, str], ...] = ()

    def element(self, element_id: str) -> ElementSpec | None:
        for el in self.elements:
            if el.element_id == element_id:
                return el
        return None

    def nav_target(self, element_id: str) -> str | None:
        for link, target in self.nav_links:
            if link == element_id:
                return target
        return None

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "elements": [el.to_dict() for el in self.elements],
            "nav_links": {k: v for k, v in self.nav_links},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PageSpec":
        return cls(
            page_id=d["page_id"],
            elements=tuple(ElementSpec.from_dict(e) for e in d.get("elements", ())),
            nav_links=tuple((k, v) for k, v in d.get("nav_links", {}).items()),
        )


@dataclass(frozen=True)
class WorldSpec:
    pages: tuple[PageSpec, ...]
    start_page: str

    def validate(self) -> None:
        ids = [p.page_id for p in self.pages]
        if len(set(ids)) != len(ids):
            raise WorldError("duplicate page ids")
        if self.start_page not in ids:
            raise UnknownPage(f"start page {self.start_page!r} not declared")
        for page in self.pages:
            el_ids = [e.element_id for e in page.elements]
            if len(set(el_ids)) != len(el_ids):
                raise WorldError(f"duplicate element ids on page {page.page_id!r}")
            for el in page.elements:
                if el.kind not in ELEMENT_KINDS:
                    raise WorldError(f"unknown element kind {el.kind!r}")
                if (el.kind == "select") != bool(el.options):
                    raise WorldError(
                        f"element {el.element_id!r}: options present iff kind=select"
                    )
            for link, target in page.nav_links:
                if target not in ids:
                    raise UnknownPage(f"nav link {link!r} targets unknown page {target!r}")

    def page(self, page_id: str) -> PageSpec:
        for p in self.pages:
            if p.page_id == page_id:
                return p
        raise UnknownPage(f"unknown page {page_id!r}")

    def element_roles(self) -> dict[str, str]:
        return {el.element_id: el.role for p in self.pages for el in p.elements}

    def sensitive_roles(self) -> set[str]:
        return {el.role for p in self.pages for el in p.elements if el.sensitive}

    def find_role(self, page_id: str, role: str) -> ElementSpec | None:
        for el in self.page(page_id).elements:
            if el.role == role:
                return el
        return None

    def to_dict(self) -> dict:
        return {"start_page": self.start_page, "pages": [p.to_dict() for p in self.pages]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorldSpec":
        world = cls(
            pages=tuple(PageSpec.from_dict(p) for p in d.get("pages", ())),
            start_page=d["start_page"],
        )
        world.validate()
        return world


def load_world(path: str | Path) -> WorldSpec:
    return WorldSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_world(world: WorldSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class EnvState:
    """Concrete environment state. Transitions return fresh values.

    ``completed`` tracks every template key performed this session; it is
    state, not derivation, because click and navigation actions leave no
    field value to recover it from.
    """

    current_page: str
    field_values: tuple[tuple[str, str], ...] = ()
    focused: str | None = None
    submitted: bool = False
    tick: int = 0
    completed: frozenset[TemplateKey] = frozenset()

    def value_of(self, element_id: str) -> str | None:
        for k, v in self.field_values:
            if k == element_id:
                return v
        return None

    def _with_value(self, element_id: str, value: str) -> tuple[tuple[str, str], ...]:
        kept = tuple((k, v) for k, v in self.field_values if k != element_id)
        return kept + ((element_id, value),)


def initial_state(world: WorldSpec) -> EnvState:
    world.validate()
    return EnvState(current_page=world.start_page)


def signature_of(env_state: EnvState) -> StateSignature:
    """Pure projection of an environment state onto its abstract signature."""
    return StateSignature(
        page=env_state.current_page,
        completed=env_state.completed,
        focused=env_state.focused,
    )


def _resolve(world: WorldSpec, state: EnvState, element_id: str | None) -> ElementSpec:
    page = world.page(state.current_page)
    if element_id is None:
        raise ElementNotFound("action requires a target element")
    el = page.element(element_id)
    if el is None:
        raise ElementNotFound(f"no element {element_id!r} on page {state.current_page!r}")
    return el


def _check_enabled(el: ElementSpec, state: EnvState) -> None:
    missing = el.enabled_when - state.completed
    if missing:
        raise ElementDisabled(
            f"{el.element_id!r} requires {sorted(key_str(k) for k in missing)} first"
        )


def apply(state: EnvState, action: ActivityInstance, world: WorldSpec) -> EnvState:
    """Apply one activity, returning the successor state.

    Raises without touching ``state`` on any violation; the tick advances by
    exactly one on success.
    """
    t = action.template
    if t.kind == "Navigate":
        target = t.element_role or action.arg("page") or ""
        world.page(target)  # raises UnknownPage
        return replace(
            state,
            current_page=target,
            focused=None,
            tick=state.tick + 1,
            completed=state.completed | {t.key},
        )

    el = _resolve(world, state, t.element_id)
    _check_enabled(el, state)
    page = world.page(state.current_page)

    if t.kind == "Type":
        if el.kind != "text_field":
            raise ElementNotFound(f"{el.element_id!r} is not a text field")
        return replace(
            state,
            field_values=state._with_value(el.element_id, action.arg("text") or ""),
            focused=el.element_id,
            tick=state.tick + 1,
            completed=state.completed | {t.key},
        )
    if t.kind == "Select":
        if el.kind != "select":
            raise ElementNotFound(f"{el.element_id!r} is not a select")
        return replace(
            state,
            field_values=state._with_value(el.element_id, action.arg("option") or ""),
            focused=el.element_id,
            tick=state.tick + 1,
            completed=state.completed | {t.key},
        )
    if t.kind == "Click":
        nav_target = page.nav_target(el.element_id)
        if nav_target is not None:
            world.page(nav_target)
            return replace(
                state,
                current_page=nav_target,
                focused=None,
                tick=state.tick + 1,
                completed=state.completed | {t.key},
            )
        # Plain clicks keep focus; clicking a field focuses it.
        focused = el.element_id if el.kind == "text_field" else state.focused
        return replace(
            state,
            focused=focused,
            tick=state.tick + 1,
            completed=state.completed | {t.key},
        )
    if t.kind == "Submit":
        if el.kind != "button":
            raise ElementNotFound(f"{el.element_id!r} is not a button")
        if state.submitted:
            raise AlreadySubmitted("form already submitted")
        unfilled = [
            e.element_id
            for p in world.pages
            for e in p.elements
            if e.required and not state.value_of(e.element_id)
        ]
        if unfilled:
            raise MissingRequired(f"required fields unfilled: {unfilled}")
        return replace(
            state,
            submitted=True,
            tick=state.tick + 1,
            completed=state.completed | {t.key},
        )
    raise WorldError(f"unknown activity kind {t.kind!r}")


def apply_event(
    state: EnvState,
    action_kind: str,
    target_element: str | None,
    params: Mapping[str, str],
    world: WorldSpec,
) -> EnvState:
    """Apply one raw event (the recorder-facing transition).

    Focus and keypress events are sub-activity steps; everything else routes
    through :func:`apply`.
    """
    if action_kind == "focus":
        el = _resolve(world, state, target_element)
        return replace(state, focused=el.element_id, tick=state.tick + 1)
    if action_kind == "keypress":
        if state.focused is None:
            raise MalformedTrace("keypress without a focused element")
        el = _resolve(world, state, state.focused)
        if el.kind != "text_field":
            raise ElementNotFound(f"{el.element_id!r} is not a text field")
        _check_enabled(el, state)
        char = params.get("char", "")
        current = state.value_of(el.element_id) or ""
        return replace(
            state,
            field_values=state._with_value(el.element_id, current + char),
            tick=state.tick + 1,
            completed=state.completed | {("Type", el.role)},
        )

    kind_map = {"click": "Click", "type": "Type", "select": "Select",
                "navigate": "Navigate", "submit": "Submit"}
    if action_kind not in kind_map:
        raise MalformedTrace(f"unknown event kind {action_kind!r}")
    kind = kind_map[action_kind]
    if kind == "Navigate":
        template = ActionTemplate("Navigate", params.get("page", ""))
    else:
        el = _resolve(world, state, target_element)
        template = ActionTemplate(kind, el.role, el.element_id)
    return apply(state, ActivityInstance(template=template, args=tuple(params.items())), world)


# ---------------------------------------------------------------------------
# Fingerprints and perturbations.


def fingerprint(world: WorldSpec) -> Fingerprint:
    full = [
        (p.page_id, el.element_id, el.role, el.kind)
        for p in world.pages
        for el in p.elements
    ]
    roles = [(p.page_id, el.role, el.kind) for p in world.pages for el in p.elements]
    return Fingerprint(
        digest=hashlib.sha256(json.dumps(full).encode()).hexdigest(),
        role_digest=hashlib.sha256(json.dumps(roles).encode()).hexdigest(),
    )


PERTURB_MODES = ("rename_ids", "reorder_elements")


def perturb(world: WorldSpec, mode: str) -> WorldSpec:
    """Deterministic world perturbation.

    ``rename_ids`` suffixes every element id with ``_v2`` (roles intact, so
    the role digest is preserved). ``reorder_elements`` reverses each page's
    element order; applying it twice restores the original world.
    """
    if mode == "rename_ids":
        pages = tuple(
            PageSpec(
                page_id=p.page_id,
                elements=tuple(
                    replace(el, element_id=el.element_id + "_v2") for el in p.elements
                ),
                nav_links=tuple((link + "_v2", target) for link, target in p.nav_links),
            )
            for p in world.pages
        )
        return WorldSpec(pages=pages, start_page=world.start_page)
    if mode == "reorder_elements":
        pages = tuple(
            replace(p, elements=tuple(reversed(p.elements))) for p in world.pages
        )
        return WorldSpec(pages=pages, start_page=world.start_page)
    raise ValueError(f"unknown perturbation mode {mode!r}")
