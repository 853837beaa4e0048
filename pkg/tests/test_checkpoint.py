import pytest
import torch

from transnar.checkpoint import CheckpointError, load_checkpoint, parameter_checksum, save_checkpoint
from transnar.nar import NAR, NarConfig


def test_round_trip(tmp_path):
    torch.manual_seed(0)
    model = NAR(NarConfig(hidden=8))
    path = save_checkpoint(tmp_path / "m.pt", "nar", {"hidden": 8}, model.state_dict(), note="x")
    payload = load_checkpoint(path, "nar")
    assert payload["note"] == "x" and payload["config"] == {"hidden": 8}
    other = NAR(NarConfig(hidden=8))
    other.load_state_dict(payload["state"])
    assert parameter_checksum(other) == parameter_checksum(model)
    assert not list(tmp_path.glob("*.tmp"))


def test_checksum_sees_every_parameter():
    torch.manual_seed(0)
    model = NAR(NarConfig(hidden=8))
    before = parameter_checksum(model)
    for p in model.parameters():
        with torch.no_grad():
            # smallest representable change
            p.view(-1)[0] = torch.nextafter(p.view(-1)[0], torch.tensor(float("inf")))
        assert parameter_checksum(model) != before
        before = parameter_checksum(model)


def test_wrong_kind_missing_file_and_version(tmp_path):
    path = save_checkpoint(tmp_path / "m.pt", "nar", {}, {})
    with pytest.raises(CheckpointError, match="expected"):
        load_checkpoint(path, "transnar")
    with pytest.raises(CheckpointError, match="does not exist"):
        load_checkpoint(tmp_path / "absent.pt")
    torch.save({"format_version": 99}, tmp_path / "old.pt")
    with pytest.raises(CheckpointError, match="format"):
        load_checkpoint(tmp_path / "old.pt")
