import json

import pytest
from click.testing import CliRunner

from langselect.cli import main
from langselect.config import load_config
from langselect.datasets import DatasetId, load_dataset, save_dataset
from langselect.languages import Language
from langselect.pipeline import (
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_TRANSPORT,
    run_embed,
    run_evaluate,
    run_infer,
    run_select_llm,
    run_simulate,
    run_translate,
    store_dir,
    translation_file,
)
from langselect.report import report_from_json
from langselect.store import RunStore

from helpers import make_item
from stub_server import StubServer, echo_translation_responder


def good_chat_responder(body: str, payload: dict) -> str:
    if "expert_language" in body:
        return json.dumps({"expert_language": "Thai"})
    if "_translation" in body:
        return echo_translation_responder(body, payload)
    return json.dumps({"reasoning_in_English": "the first option looks right", "final_answer": "A"})


@pytest.fixture
def pipeline_stub():
    with StubServer(chat_responder=good_chat_responder) as server:
        yield server


def write_pipeline_config(tmp_path, stub, languages=("en", "tr", "th"), n_items=6, **extra):
    items = [
        make_item(f"q{i}", gold="A", country="China" if i % 2 == 0 else None) for i in range(n_items)
    ]
    save_dataset(items, tmp_path / "data.jsonl")
    endpoint = {"base_url": stub.base_url, "model_name": "stub-model", "max_retries": 1, "timeout": 5}
    payload = {
        "dataset": {"path": "data.jsonl", "id": "custom"},
        "output_dir": "out",
        "languages": list(languages),
        "split": {"seed": 3, "train_count": n_items - 2, "test_count": 2},
        "k_list": [2],
        "seeds": [0],
        "chat_endpoint": endpoint,
        "translation_endpoint": endpoint,
        "embedding_endpoint": {**endpoint, "model_name": "stub-embedder"},
    }
    payload.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestTranslateStage:
    def test_writes_one_file_per_non_english_language(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        result = run_translate(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        for code in ("tr", "th"):
            path = translation_file(config, Language(code))
            assert path.exists()
            translated = load_dataset(path, DatasetId.CUSTOM, source_language=Language(code))
            assert len(translated) == 6
            assert all(t.question.startswith("[") for t in translated)
        assert not translation_file(config, Language.ENGLISH).exists()

    def test_rerun_is_zero_network_calls_and_identical_bytes(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        run_translate(config, backoff=0.001)
        tr_path = translation_file(config, Language.TURKISH)
        before_bytes = tr_path.read_bytes()
        before_calls = len(pipeline_stub.requests)
        result = run_translate(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        assert len(pipeline_stub.requests) == before_calls
        assert tr_path.read_bytes() == before_bytes

    def test_dry_run_counts_without_calls(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        result = run_translate(config, dry_run=True)
        # 6 items x (1 question + 4 choices) x 2 languages
        assert result.summary["planned_calls"] == 60
        assert pipeline_stub.requests == []

    def test_unreachable_endpoint_exits_transport_no_partial_files(self, tmp_path):
        with StubServer() as stub:
            config_path = write_pipeline_config(
                tmp_path,
                stub,
                translation_endpoint={
                    "base_url": "http://127.0.0.1:1",
                    "model_name": "t",
                    "max_retries": 0,
                    "timeout": 0.2,
                },
            )
        config = load_config(config_path)
        result = run_translate(config, languages=[Language.TURKISH], backoff=0.001)
        assert result.exit_code == EXIT_TRANSPORT
        translated = load_dataset(
            translation_file(config, Language.TURKISH), DatasetId.CUSTOM, source_language=Language.TURKISH
        )
        assert translated == []  # atomic write of an empty result, no torn file


class TestInferStage:
    def test_fills_all_cells(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        run_translate(config, backoff=0.001)
        result = run_infer(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        assert result.summary["ok"] == 18  # 6 items x 3 languages
        assert result.summary["remaining_missing_cells"] == 0
        store = RunStore(store_dir(config, "stub-model"))
        assert len(store) == 18
        assert store.read_manifest()["model_name"] == "stub-model"

    def test_rerun_zero_calls(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        run_translate(config, backoff=0.001)
        run_infer(config, backoff=0.001)
        before = len(pipeline_stub.requests)
        result = run_infer(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        assert len(pipeline_stub.requests) == before
        assert result.summary["planned_calls"] == 0

    def test_missing_translations_exit_partial(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        result = run_infer(config, backoff=0.001)  # translate never ran
        assert result.exit_code == EXIT_PARTIAL
        assert set(result.summary["untranslated_languages"]) == {"tr", "th"}
        # English cells still ran.
        assert result.summary["ok"] == 6

    def test_transport_failure_leaves_cell_missing_and_partial_exit(self, tmp_path):
        with StubServer(chat_responder=good_chat_responder) as stub:
            config = load_config(write_pipeline_config(tmp_path, stub, languages=("en",)))
            stub.fail_after = 3
            result = run_infer(config, backoff=0.001)
            assert result.exit_code == EXIT_PARTIAL
            assert result.summary["ok"] == 3
            assert result.summary["transport_failures"] == 3
            assert result.summary["remaining_missing_cells"] == 3
            stub.fail_after = None
            healed = run_infer(config, backoff=0.001)
            assert healed.exit_code == EXIT_OK
            assert healed.summary["ok"] == 3
            assert healed.summary["remaining_missing_cells"] == 0

    def test_dry_run(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub, languages=("en",)))
        result = run_infer(config, dry_run=True)
        assert result.summary["planned_calls"] == 6
        assert pipeline_stub.requests == []

    def test_invalid_outputs_recorded(self, tmp_path):
        def junk_responder(body, payload):
            return "no label to be found"

        with StubServer(chat_responder=junk_responder) as stub:
            config = load_config(write_pipeline_config(tmp_path, stub, languages=("en",)))
            result = run_infer(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        assert result.summary["invalid"] == 6
        assert result.summary["remaining_missing_cells"] == 0  # invalid cells are not missing


class TestSelectLlmStage:
    def test_caches_choice_per_test_item(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        result = run_select_llm(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        cache = json.loads((config.output_dir / "selection_cache.json").read_text())
        assert len(cache) == 2  # test split size
        assert set(cache.values()) == {"th"}

    def test_rerun_zero_calls(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        run_select_llm(config, backoff=0.001)
        before = len(pipeline_stub.requests)
        result = run_select_llm(config, backoff=0.001)
        assert len(pipeline_stub.requests) == before
        assert result.summary["planned_calls"] == 0

    def test_malformed_output_records_english_fallback(self, tmp_path):
        with StubServer(chat_responder=lambda b, p: "???") as stub:
            config = load_config(write_pipeline_config(tmp_path, stub))
            result = run_select_llm(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        cache = json.loads((config.output_dir / "selection_cache.json").read_text())
        assert set(cache.values()) == {"en"}


class TestEmbedStage:
    def test_embeds_split_items(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        result = run_embed(config, backoff=0.001)
        assert result.exit_code == EXIT_OK
        assert (config.output_dir / "embeddings.jsonl").exists()

    def test_rerun_zero_calls(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
        run_embed(config, backoff=0.001)
        before = len(pipeline_stub.requests)
        result = run_embed(config, backoff=0.001)
        assert len(pipeline_stub.requests) == before
        assert result.summary["planned_calls"] == 0


class TestEvaluateStage:
    def run_full_pipeline(self, tmp_path, stub):
        config = load_config(write_pipeline_config(tmp_path, stub, n_items=8))
        assert run_translate(config, backoff=0.001).exit_code == EXIT_OK
        assert run_infer(config, backoff=0.001).exit_code == EXIT_OK
        assert run_select_llm(config, backoff=0.001).exit_code == EXIT_OK
        assert run_embed(config, backoff=0.001).exit_code == EXIT_OK
        return config

    def test_full_pipeline_report(self, tmp_path, pipeline_stub):
        config = self.run_full_pipeline(tmp_path, pipeline_stub)
        result = run_evaluate(config)
        assert result.exit_code == EXIT_OK
        report = report_from_json((config.output_dir / "reports" / "report.json").read_bytes())
        strategies = set(report.accuracy_by_strategy)
        assert strategies == {
            "only_english", "majority", "global_language", "llm_selected",
            "country", "lsk_extractor", "oracle",
        }
        oracle = report.accuracy_by_strategy["oracle"]
        assert all(acc <= oracle for acc in report.accuracy_by_strategy.values())
        assert report.cluster_size_sweep == {2: report.accuracy_by_strategy["lsk_extractor"]}
        assert (config.output_dir / "reports" / "report.csv").exists()
        assert (config.output_dir / "reports" / "report.md").exists()
        assert (config.output_dir / "global_choice.json").exists()
        assert (config.output_dir / "cluster_model_k2.json").exists()

    def test_evaluate_rerun_byte_identical(self, tmp_path, pipeline_stub):
        config = self.run_full_pipeline(tmp_path, pipeline_stub)
        run_evaluate(config)
        report_path = config.output_dir / "reports" / "report.json"
        first = report_path.read_bytes()
        run_evaluate(config)
        assert report_path.read_bytes() == first

    def test_skips_are_named(self, tmp_path, pipeline_stub):
        config = load_config(write_pipeline_config(tmp_path, pipeline_stub, languages=("en",)))
        run_infer(config, backoff=0.001)
        result = run_evaluate(config)
        assert result.exit_code == EXIT_OK
        skipped = result.summary["skipped_strategies"]
        assert "select-llm" in skipped["llm_selected"]
        assert "embed" in skipped["lsk_extractor"]

    def test_country_skipped_without_metadata(self, tmp_path, pipeline_stub):
        items = [make_item(f"q{i}", gold="A") for i in range(6)]  # no countries
        save_dataset(items, tmp_path / "data.jsonl")
        config_path = write_pipeline_config(tmp_path, pipeline_stub, languages=("en",))
        save_dataset(items, tmp_path / "data.jsonl")
        config = load_config(config_path)
        run_infer(config, backoff=0.001)
        result = run_evaluate(config)
        assert "country" in result.summary["skipped_strategies"]
        report = report_from_json((config.output_dir / "reports" / "report.json").read_bytes())
        assert "country" not in report.accuracy_by_strategy


class TestSimulateStage:
    def write_spec(self, tmp_path, **overrides):
        payload = {
            "n_items": 60,
            "k_true": 3,
            "dim": 8,
            "languages": ["en", "es", "hi", "th"],
            "expert_per_cluster": ["es", "hi", "th"],
            "p_expert": 1.0,
            "p_other": 0.0,
            "spread": 0.0,
            "separation": 0.5,
            "seed": 5,
        }
        payload.update(overrides)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(payload))
        return path

    def test_noiseless_simulate_all_seven_strategies(self, tmp_path):
        spec = self.write_spec(tmp_path)
        result = run_simulate(spec, tmp_path / "sim")
        assert result.exit_code == EXIT_OK
        report = report_from_json((tmp_path / "sim" / "reports" / "report.json").read_bytes())
        assert set(report.accuracy_by_strategy) == {
            "only_english", "majority", "global_language", "llm_selected",
            "country", "lsk_extractor", "oracle",
        }
        assert report.accuracy_by_strategy["lsk_extractor"] == 1.0
        assert report.accuracy_by_strategy["oracle"] == 1.0
        assert report.config_snapshot["ground_truth"]["planted_experts_recovered"] == 3
        assert (tmp_path / "sim" / "items.jsonl").exists()
        assert (tmp_path / "sim" / "embeddings.jsonl").exists()
        assert (tmp_path / "sim" / "store" / "custom__synthetic" / "records.jsonl").exists()

    def test_simulate_deterministic_reports(self, tmp_path):
        spec = self.write_spec(tmp_path, p_expert=0.8, p_other=0.2, spread=0.05)
        run_simulate(spec, tmp_path / "a")
        run_simulate(spec, tmp_path / "b")
        assert (tmp_path / "a" / "reports" / "report.json").read_bytes() == (
            tmp_path / "b" / "reports" / "report.json"
        ).read_bytes()


class TestCliInterface:
    def test_translate_dry_run_via_cli(self, tmp_path, pipeline_stub):
        config_path = write_pipeline_config(tmp_path, pipeline_stub)
        runner = CliRunner()
        result = runner.invoke(main, ["translate", "--config", str(config_path), "--dry-run"])
        assert result.exit_code == EXIT_OK, result.output
        assert '"planned_calls": 60' in result.output

    def test_bad_language_flag(self, tmp_path, pipeline_stub):
        config_path = write_pipeline_config(tmp_path, pipeline_stub)
        runner = CliRunner()
        result = runner.invoke(main, ["infer", "--config", str(config_path), "--languages", "xx"])
        assert result.exit_code != 0

    def test_language_outside_config_set_is_config_error(self, tmp_path, pipeline_stub):
        config_path = write_pipeline_config(tmp_path, pipeline_stub, languages=("en", "tr"))
        runner = CliRunner()
        result = runner.invoke(
            main, ["infer", "--config", str(config_path), "--languages", "th", "--dry-run"]
        )
        assert result.exit_code == 2

    def test_simulate_and_report_commands(self, tmp_path):
        spec = TestSimulateStage().write_spec(tmp_path)
        runner = CliRunner()
        result = runner.invoke(
            main, ["simulate", "--spec", str(spec), "--output", str(tmp_path / "sim")]
        )
        assert result.exit_code == EXIT_OK, result.output
        report_path = tmp_path / "sim" / "reports" / "report.json"
        rendered = runner.invoke(main, ["report", "--report", str(report_path), "--format", "markdown"])
        assert rendered.exit_code == 0
        assert "| oracle |" in rendered.output

    def test_missing_config_file(self):
        runner = CliRunner()
        result = runner.invoke(main, ["evaluate", "--config", "/nonexistent.json"])
        assert result.exit_code == 2


class TestAuthFailures:
    def test_translate_auth_error_preserves_progress(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STUB_KEY", "right")
        with StubServer(chat_responder=good_chat_responder, require_key="right") as stub:
            config_path = write_pipeline_config(
                tmp_path,
                stub,
                languages=("en", "tr"),
                translation_endpoint={
                    "base_url": stub.base_url,
                    "model_name": "t",
                    "api_key_ref": "STUB_KEY",
                    "max_retries": 0,
                    "timeout": 5,
                },
            )
            config = load_config(config_path)
            # Key goes bad after the first two items' fields.
            original_post = None
            calls = {"n": 0}

            def flip_key_later(body, payload):
                calls["n"] += 1
                if calls["n"] == 10:  # two items done (5 fields each)
                    monkeypatch.setenv("STUB_KEY", "wrong")
                return good_chat_responder(body, payload)

            stub.chat_responder = flip_key_later
            result = run_translate(config, backoff=0.001)
            assert result.exit_code == 2
        translated = load_dataset(
            translation_file(config, Language.TURKISH), DatasetId.CUSTOM, source_language=Language.TURKISH
        )
        assert len(translated) == 2  # completed items were flushed

    def test_infer_auth_error_exits_config(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STUB_KEY", "wrong")
        with StubServer(require_key="right") as stub:
            config_path = write_pipeline_config(
                tmp_path,
                stub,
                languages=("en",),
                chat_endpoint={
                    "base_url": stub.base_url,
                    "model_name": "m",
                    "api_key_ref": "STUB_KEY",
                    "max_retries": 0,
                    "timeout": 5,
                },
            )
            config = load_config(config_path)
            result = run_infer(config, backoff=0.001)
        assert result.exit_code == 2
        assert "error" in result.summary


def test_evaluate_uses_bundled_blend_country_map(tmp_path):
    # All items are about China; with the bundled map the country strategy
    # must route every test item to Chinese.
    items = [make_item(f"q{i}", gold="A", country="China") for i in range(6)]
    with StubServer(chat_responder=good_chat_responder) as stub:
        config_path = write_pipeline_config(
            tmp_path, stub, languages=("en", "zh"), dataset={"path": "data.jsonl", "id": "blend"}
        )
        save_dataset(items, tmp_path / "data.jsonl")
        config = load_config(config_path)
        run_translate(config, backoff=0.001)
        run_infer(config, backoff=0.001)
        result = run_evaluate(config)
    assert result.exit_code == EXIT_OK
    report = report_from_json((config.output_dir / "reports" / "report.json").read_bytes())
    assert report.language_distribution["country"] == {"zh": 2}


def test_lock_prevents_concurrent_drivers(tmp_path, pipeline_stub):
    from langselect.pipeline import RunLockedError, run_lock

    config = load_config(write_pipeline_config(tmp_path, pipeline_stub))
    with run_lock(config.output_dir):
        with pytest.raises(RunLockedError):
            run_translate(config, backoff=0.001)
