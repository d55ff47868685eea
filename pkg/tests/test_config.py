import pytest

from comblayer.config import ConfigError, dump_run_config, load_model_spec, load_run_config
from comblayer.models import ModelSpec
from comblayer.nn import TrainConfig

GOOD = """\
model:
  frontend: conv
  channels: 16
  f_min_hz: 150
  conv_kernel_samples: 101
train:
  lr: 0.002
  max_steps: 40
  eval_interval_steps: 20
data:
  dir: d
output:
  dir: /abs/out
  run_name: trial
"""


def write(tmp_path, text):
    p = tmp_path / "run.yaml"
    p.write_text(text)
    return p


def test_good(tmp_path):
    rc = load_run_config(write(tmp_path, GOOD))
    assert rc.spec == ModelSpec(frontend="conv", channels=16, f_min=150.0, conv_kernel=101)
    assert rc.train == TrainConfig(lr=0.002, max_steps=40, eval_interval=20)
    assert rc.data_dir == tmp_path / "d"
    assert str(rc.out_dir) == "/abs/out" and rc.run_name == "trial"


def test_roundtrip(tmp_path):
    rc = load_run_config(write(tmp_path, GOOD))
    again = load_run_config(write(tmp_path, dump_run_config(rc)))
    assert (again.spec, again.train, again.run_name) == (rc.spec, rc.train, rc.run_name)


@pytest.mark.parametrize("text,line,match", [
    ("model:\n  channels: 8\n  f_min: 3\ndata:\n  dir: d\n", 3, "unknown key 'f_min'"),
    ("data:\n  dir: d\ntrain:\n  lr: fast\n", 4, "expected a number"),
    ("data:\n  dir: d\nmodel:\n  channels: 2.5\n", 4, "integer"),
    ("data:\n  dir: d\nmodel: [1, 2]\n", 3, "mapping"),
    ("data:\n  dir: d\nbogus: 1\n", 3, "unknown section"),
    ("data:\n  dir: d\nmodel:\n  channels: 8\n  channels: 9\n", 5, "duplicate"),
    ("data:\n  dir: d\nmodel:\n  channels: [8\n", 5, None),
    ("data:\n  dir: d\nmodel:\n  later_kernel: 4\n", 3, "odd"),
])
def test_errors_carry_line_numbers(tmp_path, text, line, match):
    with pytest.raises(ConfigError) as info:
        load_run_config(write(tmp_path, text))
    assert info.value.line == line
    assert ":%d:" % line in str(info.value)
    if match:
        assert match in str(info.value)


def test_data_dir_required(tmp_path):
    with pytest.raises(ConfigError, match="data.dir"):
        load_run_config(write(tmp_path, "model:\n  channels: 8\n"))
    assert load_model_spec(tmp_path / "run.yaml").channels == 8


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / "absent.yaml")
