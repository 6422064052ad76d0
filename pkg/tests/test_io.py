"""Tests for configuration parsing, snapshots, diagnostics CSV, builders."""
import io as stdio

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnwave.diagnostics import DiagnosticsRecord
from gnwave.errors import ParseError, SnapshotFormatError, ValidationError
from gnwave.grid import PeriodicGrid, ScalarField, VectorField
from gnwave.io import (
    DIAGNOSTIC_COLUMNS,
    FileSinks,
    append_diagnostics,
    build_bathymetry,
    build_initial_state,
    load_config,
    read_diagnostics,
    read_snapshot,
    read_snapshot_header,
    save_config,
    write_snapshot,
)
from gnwave.models import FluidState, Formulation, ModelParams, VariableKind
from gnwave.timeloop import run
from gnwave.verify import solitary_wave_state

MINIMAL = """
[grid]
shape = 16

[integration]
dt = 0.01
t_end = 0.1
"""


def config_text(**replacements: str) -> str:
    """MINIMAL plus extra sections appended verbatim."""
    return MINIMAL + "\n" + "\n".join(replacements.values())


def random_state(grid: PeriodicGrid, seed: int = 0, kind=VariableKind.V_VARIABLE) -> FluidState:
    rng = np.random.default_rng(seed)
    return FluidState(
        ScalarField(grid, rng.standard_normal(grid.shape)),
        VectorField(grid, rng.standard_normal((grid.dim, *grid.shape))),
        kind,
        time=0.625,
    )


class TestLoadConfig:
    def test_minimal_defaults(self):
        """A config with only the required keys gets the documented defaults."""
        cfg = load_config(MINIMAL)
        assert cfg.params.epsilon == 1.0
        assert cfg.params.mu == 1.0
        assert cfg.params.formulation is Formulation.GN_V
        assert cfg.grid.shape == (16,)
        assert cfg.grid.lengths == (2.0 * np.pi,)
        assert cfg.integration.scheme == "rk4"
        assert cfg.integration.diag_stride == 1
        assert cfg.integration.snapshot_stride == 0
        assert cfg.integration.mollifier.iota == 0.0
        assert cfg.elliptic.preconditioner == "flat_state"
        assert cfg.initial.kind == "rest"
        assert cfg.bathymetry.kind == "flat"
        assert cfg.output.directory == "out"
        assert cfg.output.formats == ("csv", "snapshot")

    def test_negative_mu_rejected(self):
        """mu < 0 is a validation failure."""
        with pytest.raises(ValidationError, match="mu"):
            load_config(MINIMAL + "\n[model]\nmu = -1\n")

    def test_all_violations_listed(self):
        """One error message enumerates every violation, not just the first."""
        bad = "[model]\nmu = -1\nepsilon = frog\n\n[grid]\nshape = 17\n\n[junk]\na = 1\n"
        with pytest.raises(ValidationError) as excinfo:
            load_config(bad)
        message = str(excinfo.value)
        for needle in ("mu", "epsilon", "even", "unknown section", "dt"):
            assert needle in message

    def test_unknown_key_rejected(self):
        """Keys outside the documented schema are refused."""
        with pytest.raises(ValidationError, match="unknown key"):
            load_config(MINIMAL + "\n[model]\nbogus = 3\n")

    def test_unknown_section_rejected(self):
        """Sections outside the documented schema are refused."""
        with pytest.raises(ValidationError, match="unknown section"):
            load_config(MINIMAL + "\n[extras]\na = 1\n")

    def test_parse_error_carries_line(self):
        """Content before any section header reports its line number."""
        with pytest.raises(ParseError) as excinfo:
            load_config("x = 1\n[grid]\nshape = 16\n")
        assert excinfo.value.line == 1

    def test_malformed_line_rejected(self):
        """A line without the key = value shape is a parse error."""
        with pytest.raises(ParseError, match="malformed"):
            load_config("[grid]\nshape 16\n")

    def test_duplicate_key_rejected(self):
        """The same key twice in one section is a parse error."""
        with pytest.raises(ParseError):
            load_config("[grid]\nshape = 16\nshape = 32\n")

    def test_overrides_applied(self):
        """Dotted overrides replace values before validation."""
        cfg = load_config(MINIMAL, overrides=["model.mu=0.25", "output.directory=elsewhere"])
        assert cfg.params.mu == 0.25
        assert cfg.output.directory == "elsewhere"

    def test_override_validated(self):
        """Overrides pass through the same validation as file values."""
        with pytest.raises(ValidationError, match="mu"):
            load_config(MINIMAL, overrides=["model.mu=-3"])

    def test_malformed_override_rejected(self):
        """An override without section.key=value shape is refused."""
        with pytest.raises(ValidationError, match="override"):
            load_config(MINIMAL, overrides=["mu=0.5"])

    def test_velocity_y_rejected_in_1d(self):
        """The second velocity component only exists on 2D grids."""
        text = MINIMAL + "\n[initial]\ntype = fourier_modes\nvelocity_y = 1 0.1 0.0\n"
        with pytest.raises(ValidationError, match="two-dimensional"):
            load_config(text)

    def test_solitary_needs_dispersion(self):
        """The solitary-wave initial state requires mu > 0."""
        text = MINIMAL + "\n[model]\nmu = 0\n\n[initial]\ntype = solitary_wave\namplitude = 0.2\n"
        with pytest.raises(ValidationError, match="mu > 0"):
            load_config(text)

    def test_modes_outside_band_rejected(self):
        """Trig components beyond the retained spectral band are refused."""
        text = MINIMAL + "\n[initial]\ntype = fourier_modes\nzeta = 7 0.1 0.0\n"
        with pytest.raises(ValidationError, match="band"):
            load_config(text)

    def test_varying_bottom_needs_beta(self):
        """A non-flat bottom with beta = 0 is inconsistent."""
        text = MINIMAL + "\n[bathymetry]\ntype = gaussian_bump\namplitude = 0.1\nwidth = 1.0\n"
        with pytest.raises(ValidationError, match="beta"):
            load_config(text)

    def test_save_is_fixed_point(self):
        """save(load(x)) normalizes: loading it again reproduces the text."""
        rich = """
[model]
epsilon = 0.25
mu = 0.5
beta = 0.1
formulation = gn_u

[grid]
shape = 16 24
lengths = 6.0 5.0

[integration]
dt = 0.02
t_end = 1.0
scheme = rk3_ssp

[mollifier]
iota = 0.1
profile = smooth_bump

[initial]
type = fourier_modes
zeta = 1 0 0.05 0.0 ; 2 1 0.02 0.7
velocity_x = 1 0 0.03 0.0

[bathymetry]
type = gaussian_bump
amplitude = 0.2
width = 1.5

[output]
directory = results
snapshot_stride = 5
formats = csv
"""
        text1 = save_config(load_config(rich))
        text2 = save_config(load_config(text1))
        assert text1 == text2

    @given(
        epsilon=st.floats(0.0, 2.0),
        mu=st.floats(0.0, 3.0),
        dt=st.floats(1e-4, 0.5),
        length=st.floats(1.0, 50.0),
    )
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_property(self, epsilon, mu, dt, length):
        """Any loadable numeric combination survives save/load unchanged."""
        text = (
            f"[model]\nepsilon = {epsilon!r}\nmu = {mu!r}\n\n"
            f"[grid]\nshape = 8\nlengths = {length!r}\n\n"
            f"[integration]\ndt = {dt!r}\nt_end = 1.0\n"
        )
        cfg = load_config(text)
        normalized = save_config(cfg)
        again = load_config(normalized)
        assert save_config(again) == normalized
        assert again.params == cfg.params
        assert again.integration == cfg.integration
        assert again.grid.compatible(cfg.grid)


class TestSnapshots:
    def test_round_trip_bit_exact_2d(self, tmp_path):
        """Write/read reproduces every payload bit and the header fields."""
        grid = PeriodicGrid((16, 12), (6.0, 5.0))
        state = random_state(grid, seed=3)
        params = ModelParams(epsilon=0.3, beta=0.0, mu=0.7)
        path = tmp_path / "state.gnwv"
        write_snapshot(state, params, path)
        back = read_snapshot(path, expected_grid=grid)
        assert np.array_equal(back.zeta.data, state.zeta.data)
        assert np.array_equal(back.vel.data, state.vel.data)
        assert back.time == state.time
        assert back.kind is VariableKind.V_VARIABLE

    def test_kind_recovered_from_formulation(self, tmp_path):
        """A state saved from a u-variable formulation reads back as one."""
        grid = PeriodicGrid((16,), (7.0,))
        state = random_state(grid, seed=4, kind=VariableKind.U_VARIABLE)
        params = ModelParams(formulation=Formulation.GN_U)
        path = tmp_path / "state.gnwv"
        write_snapshot(state, params, path)
        assert read_snapshot(path).kind is VariableKind.U_VARIABLE

    def test_truncated_payload_rejected(self, tmp_path):
        """A payload shorter than the header promises is a length error."""
        grid = PeriodicGrid((16,), (7.0,))
        path = tmp_path / "state.gnwv"
        write_snapshot(random_state(grid), ModelParams(), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(SnapshotFormatError, match="payload"):
            read_snapshot(path)

    def test_truncated_header_rejected(self, tmp_path):
        """A file cut inside the header is reported as truncated."""
        grid = PeriodicGrid((16,), (7.0,))
        path = tmp_path / "state.gnwv"
        write_snapshot(random_state(grid), ModelParams(), path)
        path.write_bytes(path.read_bytes()[:12])
        with pytest.raises(SnapshotFormatError, match="truncated"):
            read_snapshot(path)

    def test_bad_magic_rejected(self, tmp_path):
        """Files that do not start with the magic bytes are refused."""
        path = tmp_path / "state.gnwv"
        path.write_bytes(b"NOTGNWV" + b"\0" * 64)
        with pytest.raises(SnapshotFormatError, match="magic"):
            read_snapshot(path)

    def test_cross_resolution_rejected(self, tmp_path):
        """Reading against a different expected grid is refused."""
        grid = PeriodicGrid((16,), (7.0,))
        path = tmp_path / "state.gnwv"
        write_snapshot(random_state(grid), ModelParams(), path)
        other = PeriodicGrid((32,), (7.0,))
        with pytest.raises(SnapshotFormatError, match="resolution"):
            read_snapshot(path, expected_grid=other)

    def test_header_reader(self, tmp_path):
        """The header reader exposes the stored metadata."""
        grid = PeriodicGrid((16, 12), (6.0, 5.0))
        params = ModelParams(epsilon=0.25, beta=0.0, mu=1.5, formulation=Formulation.BP)
        path = tmp_path / "state.gnwv"
        write_snapshot(random_state(grid, kind=VariableKind.U_VARIABLE), params, path)
        header = read_snapshot_header(path)
        assert header.shape == (16, 12)
        assert header.lengths == (6.0, 5.0)
        assert (header.epsilon, header.beta, header.mu) == (0.25, 0.0, 1.5)
        assert header.formulation is Formulation.BP
        assert header.time == 0.625


def make_record(time: float = 0.1) -> DiagnosticsRecord:
    return DiagnosticsRecord(
        time=time,
        mass=1.0 / 3.0,
        hamiltonian=np.pi,
        e_norm=1.0,
        f_norm=2.0,
        vorticity_l2=0.0,
        min_depth=0.875,
        cg_iterations=7,
        order=4,
    )


class TestDiagnosticsCsv:
    def test_header_written_once(self):
        """The fixed header appears exactly once at the top."""
        buf = stdio.StringIO()
        append_diagnostics(make_record(0.0), buf)
        append_diagnostics(make_record(0.1), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == ",".join(DIAGNOSTIC_COLUMNS)
        assert len(lines) == 3

    def test_reparse_reproduces_doubles(self):
        """17 significant digits round-trip every double exactly."""
        buf = stdio.StringIO()
        append_diagnostics(make_record(), buf)
        row = read_diagnostics(buf.getvalue())[0]
        assert row["mass"] == 1.0 / 3.0
        assert row["hamiltonian"] == np.pi
        assert row["cg_iterations"] == 7

    def test_bad_header_rejected(self):
        """Re-parsing text with a foreign header fails loudly."""
        with pytest.raises(ValidationError, match="header"):
            read_diagnostics("a,b\n1,2\n")

    def test_monotone_time_from_run(self, tmp_path):
        """A short integration emits a strictly increasing time column."""
        cfg = load_config(
            MINIMAL
            + "\n[model]\nepsilon = 0.1\nmu = 0.5\n"
            + "\n[initial]\ntype = fourier_modes\nzeta = 1 0.01 0.0\n"
        )
        bath = build_bathymetry(cfg)
        state = build_initial_state(cfg)
        with FileSinks(tmp_path, cfg.params, formats=("csv",)) as sinks:
            run(state, cfg.params, bath, cfg.integration, cfg.elliptic, sinks=sinks)
        rows = read_diagnostics((tmp_path / "diagnostics.csv").read_text())
        times = [row["time"] for row in rows]
        assert times == sorted(times)
        assert len(set(times)) == len(times)
        assert times[-1] == pytest.approx(0.1)

    def test_empty_run_header_only(self, tmp_path):
        """Sinks that never receive a record leave a header-only CSV."""
        with FileSinks(tmp_path, ModelParams(), formats=("csv",)):
            pass
        assert (tmp_path / "diagnostics.csv").read_text() == ",".join(DIAGNOSTIC_COLUMNS) + "\n"


class TestBuilders:
    def test_rest_state(self):
        """The default initial condition is the rest state in the right kind."""
        cfg = load_config(MINIMAL + "\n[model]\nformulation = gn_u\n")
        state = build_initial_state(cfg)
        assert state.kind is VariableKind.U_VARIABLE
        assert not state.zeta.data.any()
        assert not state.vel.data.any()

    def test_gaussian_surface(self):
        """The Gaussian hump peaks at its center with zero velocity."""
        text = MINIMAL + "\n[initial]\ntype = gaussian\namplitude = 0.1\nwidth = 0.5\n"
        cfg = load_config(text)
        state = build_initial_state(cfg)
        mid = cfg.grid.shape[0] // 2
        assert state.zeta.data[mid] == pytest.approx(0.1, rel=1e-12)
        assert float(np.max(state.zeta.data)) == pytest.approx(0.1, rel=1e-12)
        assert not state.vel.data.any()
        assert float(np.mean(state.zeta.data)) > 0.0

    def test_gaussian_is_periodic(self):
        """A wide bump keeps spectral accuracy: the image sum is smooth."""
        text = (
            "[grid]\nshape = 64\nlengths = 4.0\n\n[integration]\ndt = 0.01\nt_end = 0.1\n"
            "\n[initial]\ntype = gaussian\namplitude = 1.0\nwidth = 1.5\n"
        )
        cfg = load_config(text)
        state = build_initial_state(cfg)
        spectrum = np.abs(np.fft.rfft(state.zeta.data))
        assert spectrum[-1] / spectrum[0] < 1e-12

    def test_fourier_modes_2d(self):
        """Trig components evaluate to the stated cosine sum."""
        text = (
            "[grid]\nshape = 24 24\n\n[integration]\ndt = 0.01\nt_end = 0.1\n"
            "\n[initial]\ntype = fourier_modes\n"
            "zeta = 1 0 0.05 0.0 ; 2 1 0.02 0.7\nvelocity_y = 0 1 0.01 0.0\n"
        )
        cfg = load_config(text)
        state = build_initial_state(cfg)
        x, y = cfg.grid.coords
        expected = 0.05 * np.cos(x) + 0.02 * np.cos(2 * x + y + 0.7)
        assert np.max(np.abs(state.zeta.data - expected)) < 1e-14
        assert np.max(np.abs(state.vel.data[1] - 0.01 * np.cos(y))) < 1e-14
        assert not state.vel.data[0].any()

    def test_solitary_comes_from_oracle(self):
        """The solitary initial state equals the verification oracle output."""
        text = (
            "[grid]\nshape = 128\nlengths = 50.0\n\n[integration]\ndt = 0.01\nt_end = 0.1\n"
            "\n[initial]\ntype = solitary_wave\namplitude = 0.2\n"
        )
        cfg = load_config(text)
        state = build_initial_state(cfg)
        oracle = solitary_wave_state(cfg.grid, 0.2, cfg.params)
        assert np.array_equal(state.zeta.data, oracle.zeta.data)
        assert np.array_equal(state.vel.data, oracle.vel.data)

    def test_file_initial_condition(self, tmp_path):
        """A stored snapshot can seed a run on the same grid and parameters."""
        path = tmp_path / "ic.gnwv"
        base = load_config(MINIMAL)
        state = random_state(base.grid, seed=9)
        write_snapshot(state, base.params, path)
        cfg = load_config(MINIMAL + f"\n[initial]\ntype = file\npath = {path}\n")
        back = build_initial_state(cfg)
        assert np.array_equal(back.zeta.data, state.zeta.data)
        assert back.time == state.time

    def test_file_kind_mismatch_rejected(self, tmp_path):
        """A u-variable snapshot cannot seed a v-variable formulation."""
        path = tmp_path / "ic.gnwv"
        base = load_config(MINIMAL)
        state = random_state(base.grid, seed=9, kind=VariableKind.U_VARIABLE)
        write_snapshot(state, ModelParams(formulation=Formulation.GN_U), path)
        cfg = load_config(MINIMAL + f"\n[initial]\ntype = file\npath = {path}\n")
        with pytest.raises(ValidationError, match="variable"):
            build_initial_state(cfg)

    def test_file_param_mismatch_rejected(self, tmp_path):
        """A snapshot written under different scaling parameters is refused."""
        path = tmp_path / "ic.gnwv"
        base = load_config(MINIMAL)
        write_snapshot(random_state(base.grid), base.params, path)
        cfg = load_config(
            MINIMAL + "\n[model]\nmu = 0.5\n" + f"\n[initial]\ntype = file\npath = {path}\n"
        )
        with pytest.raises(ValidationError, match="epsilon, beta, mu"):
            build_initial_state(cfg)

    def test_bathymetry_bump(self):
        """The bottom bump has the stated amplitude and carries beta."""
        text = (
            MINIMAL
            + "\n[model]\nbeta = 0.4\n"
            + "\n[bathymetry]\ntype = gaussian_bump\namplitude = 0.3\nwidth = 0.8\n"
        )
        cfg = load_config(text)
        bath = build_bathymetry(cfg)
        assert float(np.max(bath.b.data)) == pytest.approx(0.3, rel=1e-10)
        assert bath.beta == 0.4
        assert bath.beta_grad_b is not None

    def test_bathymetry_file_length_checked(self, tmp_path):
        """A raw bottom file must hold exactly one double per grid point."""
        path = tmp_path / "bottom.f64"
        path.write_bytes(b"\0" * 8 * 15)
        text = MINIMAL + "\n[model]\nbeta = 0.4\n" + f"\n[bathymetry]\ntype = file\npath = {path}\n"
        cfg = load_config(text)
        with pytest.raises(ValidationError, match="bytes"):
            build_bathymetry(cfg)

    def test_bathymetry_file_round_trip(self, tmp_path):
        """A raw bottom file is read back exactly, row-major."""
        rng = np.random.default_rng(5)
        bottom = rng.standard_normal(16)
        path = tmp_path / "bottom.f64"
        path.write_bytes(bottom.astype("<f8").tobytes())
        text = MINIMAL + "\n[model]\nbeta = 0.4\n" + f"\n[bathymetry]\ntype = file\npath = {path}\n"
        bath = build_bathymetry(load_config(text))
        assert np.array_equal(bath.b.data, bottom)


class TestFileSinks:
    def test_run_writes_artifacts(self, tmp_path):
        """An integration leaves a CSV plus numbered snapshots on disk."""
        cfg = load_config(
            MINIMAL
            + "\n[model]\nepsilon = 0.1\nmu = 0.5\n"
            + "\n[initial]\ntype = fourier_modes\nzeta = 1 0.01 0.0\n"
            + "\n[output]\nsnapshot_stride = 5\n"
        )
        bath = build_bathymetry(cfg)
        state = build_initial_state(cfg)
        with FileSinks(tmp_path, cfg.params) as sinks:
            run(state, cfg.params, bath, cfg.integration, cfg.elliptic, sinks=sinks)
        snapshots = sorted(tmp_path.glob("snapshot_*.gnwv"))
        assert len(snapshots) >= 2
        first = read_snapshot(snapshots[0], expected_grid=cfg.grid)
        last = read_snapshot(snapshots[-1], expected_grid=cfg.grid)
        assert first.time == 0.0
        assert last.time == pytest.approx(0.1)
        assert (tmp_path / "diagnostics.csv").exists()

    def test_two_runs_byte_identical(self, tmp_path):
        """Identical configs produce byte-identical CSV and snapshots."""
        cfg = load_config(
            MINIMAL
            + "\n[model]\nepsilon = 0.1\nmu = 0.5\n"
            + "\n[initial]\ntype = fourier_modes\nzeta = 1 0.01 0.0\n"
            + "\n[output]\nsnapshot_stride = 5\n"
        )
        outputs = []
        for name in ("a", "b"):
            directory = tmp_path / name
            bath = build_bathymetry(cfg)
            state = build_initial_state(cfg)
            with FileSinks(directory, cfg.params) as sinks:
                run(state, cfg.params, bath, cfg.integration, cfg.elliptic, sinks=sinks)
            payload = (directory / "diagnostics.csv").read_bytes()
            for snap in sorted(directory.glob("snapshot_*.gnwv")):
                payload += snap.read_bytes()
            outputs.append(payload)
        assert outputs[0] == outputs[1]
