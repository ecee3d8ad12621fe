"""Remote perception oracle over a chat-completions-style HTTP endpoint.

The endpoint URL, model name, and API key come from the environment
(``GOALNAV_ORACLE_URL``, ``GOALNAV_ORACLE_MODEL``, ``GOALNAV_ORACLE_API_KEY``)
or a config mapping; the key is never accepted on the command line. Requests
carry the prompt plus base64 PNG renderings of the integrated views.
"""

from __future__ import annotations

import base64
import json
import os
import time
from dataclasses import dataclass, field

import httpx

from .errors import ConfigError, OracleError, OracleHTTPError, OracleTimeoutError, ParseError
from .memory import CommonSenseStore, render_area_map
from .perception import (
    GoalBundle,
    PromptSpec,
    StepContext,
    build_prompt,
    default_analysis_prompt,
    parse_assessments,
)
from .render import encode_png, stitch_panorama, view_raster

ENV_URL = "GOALNAV_ORACLE_URL"
ENV_MODEL = "GOALNAV_ORACLE_MODEL"
ENV_API_KEY = "GOALNAV_ORACLE_API_KEY"


@dataclass(frozen=True)
class RemoteConfig:
    url: str
    model: str
    api_key: str = ""
    timeout: float = 30.0
    attempts: int = 3
    backoff: float = 0.5

    @classmethod
    def from_env(cls, overrides: dict | None = None) -> "RemoteConfig":
        data = dict(overrides or {})
        url = data.pop("url", os.environ.get(ENV_URL, ""))
        model = data.pop("model", os.environ.get(ENV_MODEL, ""))
        api_key = os.environ.get(ENV_API_KEY, "")
        if not url:
            raise ConfigError(f"remote oracle needs an endpoint URL ({ENV_URL})")
        if not model:
            raise ConfigError(f"remote oracle needs a model name ({ENV_MODEL})")
        known = {"timeout", "attempts", "backoff"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown remote config keys: {sorted(unknown)}")
        return cls(url=url, model=model, api_key=api_key, **{k: data[k] for k in data})


def _image_part(img) -> dict:
    b64 = base64.b64encode(encode_png(img)).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}


class RemoteOracle:
    """Four capabilities over one HTTP endpoint with bounded retries."""

    def __init__(
        self,
        config: RemoteConfig,
        store: CommonSenseStore | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.config = config
        self.store = store or CommonSenseStore()
        self.analysis_prompt = default_analysis_prompt(self.store)
        self._sleep = sleep
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            timeout=config.timeout, headers=headers, transport=transport
        )

    # -- transport ---------------------------------------------------------

    def _complete(self, prompt: str, images, parse):
        content = [{"type": "text", "text": prompt}]
        content.extend(_image_part(img) for img in images)
        payload = {
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        }
        last_error: OracleError | None = None
        for attempt in range(self.config.attempts):
            if attempt:
                self._sleep(self.config.backoff * (2 ** (attempt - 1)))
            try:
                response = self._client.post(self.config.url, json=payload)
            except httpx.TimeoutException as exc:
                last_error = OracleTimeoutError(f"oracle request timed out: {exc}")
                continue
            except httpx.HTTPError as exc:
                last_error = OracleError(f"oracle transport failure: {exc}")
                continue
            if response.status_code >= 500:
                last_error = OracleHTTPError(response.status_code, response.text[:200])
                continue
            if response.status_code != 200:
                raise OracleHTTPError(response.status_code, response.text[:200])
            try:
                text = response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                last_error = ParseError(f"malformed completion envelope: {exc}", response.text[:120])
                continue
            try:
                return parse(text)
            except ParseError as exc:
                last_error = exc
                continue
        assert last_error is not None
        raise last_error

    # -- capability prompts --------------------------------------------------

    def _views_images(self, ctx: StepContext):
        imgs = [view_raster(ctx.panorama[0]), stitch_panorama(ctx.panorama)]
        if ctx.area_map is not None:
            imgs.append(render_area_map(ctx.area_map, ctx.pose.floor))
        return imgs

    def analyze_directions(self, ctx: StepContext, bundle: GoalBundle):
        spec = self.analysis_prompt
        note = "local view; six-direction panorama (0..300); top-down exploration map"
        if ctx.bias is not None and ctx.bias.active:
            note += "; current room fully explored: prefer directions toward unexplored area"
        prompt = build_prompt(spec, bundle, note)
        result = self._complete(prompt, self._views_images(ctx), parse_assessments)
        return [result[d] for d in sorted(result)]

    def plan_subgoal(self, ctx, bundle, prev_subgoal, selected_direction, selected_reason):
        spec = PromptSpec(
            objective=(
                "You are a navigation planner. Produce one short subgoal for the "
                "next few steps, or keep the previous subgoal if it still applies."
            ),
            input_spec=(
                f"Selected direction: {selected_direction} degrees. "
                f"Selection reason: {selected_reason}. Previous subgoal: "
                f"{prev_subgoal or '(none)'}. The selected view and the top-down "
                "map are attached."
            ),
            scoring="Prefer concrete, verifiable waypoints over restating the goal.",
            commonsense="\n".join(self.store.prompt_lines()),
            output_guidelines='Answer with JSON: {"subgoal": "<short text>"}.',
            output_examples='{"subgoal": "go through the doorway on the left"}',
        )
        if bundle.phase.value == "reach_new_floor":
            spec = PromptSpec(
                **{
                    **spec.__dict__,
                    "output_guidelines": (
                        'Answer with JSON: {"subgoal": "go up the stairs"} or '
                        '{"subgoal": "go down the stairs"}.'
                    ),
                }
            )

        def parse(text: str) -> str:
            data = _parse_json_object(text)
            subgoal = data.get("subgoal")
            if not isinstance(subgoal, str) or not subgoal.strip():
                raise ParseError("planner returned no subgoal", text[:120])
            return subgoal.strip()

        prompt = build_prompt(spec, bundle, "selected view; exploration map")
        images = [view_raster(ctx.panorama[selected_direction])]
        if ctx.area_map is not None:
            images.append(render_area_map(ctx.area_map, ctx.pose.floor))
        return self._complete(prompt, images, parse)

    def choose_candidate(self, ctx, bundle, candidates) -> int:
        listing = "; ".join(
            f"{c.index}: bearing {c.bearing:.2f} rad, range {c.range_m:.2f} m"
            for c in candidates
        )
        spec = PromptSpec(
            objective="Choose the best candidate position to move to next.",
            input_spec=f"Candidates: {listing}. The annotated top-down view is attached.",
            scoring="Pick the candidate that makes the most progress toward the goal while staying safe.",
            commonsense="\n".join(self.store.prompt_lines()),
            output_guidelines='Answer with JSON: {"index": <candidate index>}.',
            output_examples='{"index": 0}',
        )

        def parse(text: str) -> int:
            data = _parse_json_object(text)
            idx = data.get("index")
            if isinstance(idx, bool) or not isinstance(idx, int):
                raise ParseError("candidate index is not an integer", text[:120])
            return idx

        prompt = build_prompt(spec, bundle, "annotated candidate map")
        return self._complete(prompt, [], parse)

    def locate_goal(self, ctx, bundle, candidates) -> int | None:
        listing = "; ".join(
            f"{c.index}: bearing {c.bearing:.2f} rad, range {c.range_m:.2f} m"
            for c in candidates
        )
        spec = PromptSpec(
            objective=(
                "Decide whether the goal is currently observed. If it is, name the "
                "candidate position closest to it."
            ),
            input_spec=f"Candidates: {listing}. The annotated top-down view is attached.",
            scoring="Only report the goal when you actually see an instance of it.",
            commonsense="\n".join(self.store.prompt_lines()),
            output_guidelines=(
                'Answer with JSON: {"found": true, "index": <candidate index>} or '
                '{"found": false, "index": null}.'
            ),
            output_examples='{"found": false, "index": null}',
        )

        def parse(text: str):
            data = _parse_json_object(text)
            found = data.get("found")
            if not isinstance(found, bool):
                raise ParseError("locator returned no found flag", text[:120])
            if not found:
                return None
            idx = data.get("index")
            if isinstance(idx, bool) or not isinstance(idx, int):
                raise ParseError("locator index is not an integer", text[:120])
            return idx

        prompt = build_prompt(spec, bundle, "annotated candidate map")
        return self._complete(prompt, [], parse)

    def close(self) -> None:
        self._client.close()


def _parse_json_object(text: str) -> dict:
    s = text.strip()
    start, end = s.find("{"), s.rfind("}")
    if start < 0 or end <= start:
        raise ParseError("no JSON object in response", s[:80])
    try:
        data = json.loads(s[start : end + 1])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", s[:120]) from None
    if not isinstance(data, dict):
        raise ParseError("response is not a JSON object", s[:80])
    return data


class FallbackOracle:
    """Route calls to a primary oracle, falling back on oracle errors."""

    def __init__(self, primary, backup):
        self.primary = primary
        self.backup = backup

    def _call(self, name, *args):
        try:
            return getattr(self.primary, name)(*args)
        except OracleError:
            return getattr(self.backup, name)(*args)

    def analyze_directions(self, ctx, bundle):
        return self._call("analyze_directions", ctx, bundle)

    def plan_subgoal(self, ctx, bundle, prev_subgoal, selected_direction, selected_reason):
        return self._call("plan_subgoal", ctx, bundle, prev_subgoal, selected_direction, selected_reason)

    def choose_candidate(self, ctx, bundle, candidates):
        return self._call("choose_candidate", ctx, bundle, candidates)

    def locate_goal(self, ctx, bundle, candidates):
        return self._call("locate_goal", ctx, bundle, candidates)
