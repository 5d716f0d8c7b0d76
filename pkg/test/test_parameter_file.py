"""
Parameter catalogue, ParameterSet and parameter file tests.

Run: pytest test/test_parameter_file.py -v
"""
import pytest

from core.exceptions import ConfigurationError, ParameterBoundError, ParameterFileError
from services.parameters import IDENTIFIED, RANKABLE, SG_NAMES, STAGE1, STAGE2, ParameterSet
from utils.parameter_file import format_parameter_set, load_parameter_set, save_parameter_set, split_list


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


# ==============================================================================
# CATALOGUE
# ==============================================================================

class TestCatalogue:
    """Reference values and parameter groupings."""

    def test_reference_values(self, reference_params):
        """Defaults carry the fitted reference values"""
        assert reference_params["x_d"] == 2.633
        assert reference_params["H"] == 3.108
        assert reference_params["K_a"] == 177.995
        assert reference_params["K_ivdc"] == 457.07
        assert reference_params["P_p"] == 2.536
        assert reference_params["S_m"] == 1.152
        assert reference_params["S_sg"] == 8.8

    def test_search_bounds(self, reference_params):
        """Typical-value search boxes and the 50-150 % fallback"""
        assert reference_params.record("x_d").lower == 0.5
        assert reference_params.record("x_d").upper == 3.0
        assert reference_params.record("P_p").lower == 1.0
        assert reference_params.record("Q_p").upper == 2.0
        assert reference_params.record("H_m").lower == pytest.approx(0.275)
        assert reference_params.record("H_m").upper == pytest.approx(0.825)

    def test_stage_sets_partition_table(self):
        """Stage 1 and stage 2 split the identified parameters without overlap"""
        assert set(STAGE1) | set(STAGE2) == set(IDENTIFIED)
        assert not set(STAGE1) & set(STAGE2)
        assert len(IDENTIFIED) == 20

    def test_rankable_includes_unused_fields(self):
        assert "x_dpp" in RANKABLE
        assert "T_q_pp" in SG_NAMES
        assert "D" not in RANKABLE


# ==============================================================================
# PARAMETER SET
# ==============================================================================

class TestParameterSet:
    """Immutable named parameter vector."""

    def test_with_values_returns_new_set(self, reference_params):
        changed = reference_params.with_values({"x_d": 2.0})
        assert changed["x_d"] == 2.0
        assert reference_params["x_d"] == 2.633

    def test_negative_reactance_rejected(self, reference_params):
        with pytest.raises(ParameterBoundError):
            reference_params.with_values({"x_dp": -0.1})

    def test_zero_inertia_rejected(self, reference_params):
        with pytest.raises(ParameterBoundError):
            reference_params.with_values({"H": 0.0})

    def test_zero_rating_allowed(self, reference_params):
        """A rating of zero removes a component and is a legal value"""
        assert reference_params.with_values({"S_vsc": 0.0})["S_vsc"] == 0.0

    def test_zip_may_be_negative(self, reference_params):
        assert reference_params.with_values({"P_p": -1.0})["P_p"] == -1.0

    def test_unknown_name(self, reference_params):
        with pytest.raises(ConfigurationError):
            reference_params["x_unknown"]

    def test_with_free_is_exact(self, reference_params):
        ps = reference_params.with_free(["x_d", "H"]).with_free(["K_a"])
        assert ps.free_names() == ("K_a",)

    def test_free_value_outside_bounds(self, reference_params):
        with pytest.raises(ConfigurationError):
            reference_params.with_values({"x_d": 3.5}).with_free(["x_d"])

    def test_inverted_bounds(self, reference_params):
        with pytest.raises(ConfigurationError):
            reference_params.with_bounds({"x_d": (3.0, 1.0)})

    def test_around(self, reference_params):
        ps = reference_params.around(["x_d"], 0.2)
        assert ps.record("x_d").lower == pytest.approx(2.633 * 0.8)
        assert ps.record("x_d").upper == pytest.approx(2.633 * 1.2)

    def test_equality(self, reference_params):
        assert reference_params == ParameterSet.defaults()
        assert reference_params != reference_params.with_values({"H": 3.0})


# ==============================================================================
# PARAMETER FILES
# ==============================================================================

class TestParameterFile:
    """Flat `name = value` files."""

    def test_partial_file_keeps_defaults(self, work_dir):
        path = write(work_dir / "p.params", "# comment\nx_d = 2.5   # pu\nH = 4.0\n")
        ps = load_parameter_set(path)
        assert ps["x_d"] == 2.5
        assert ps["H"] == 4.0
        assert ps["x_q"] == 1.6

    def test_bounds_and_free_keys(self, work_dir):
        path = write(work_dir / "b.params", "x_d = 2.5\nx_d.lower = 2.0\nx_d.upper = 2.9\nx_d.free = yes\n")
        ps = load_parameter_set(path)
        rec = ps.record("x_d")
        assert (rec.lower, rec.upper, rec.free) == (2.0, 2.9, True)
        assert ps.free_names() == ("x_d",)

    def test_save_then_load_is_exact(self, work_dir, reference_params):
        """Values written with repr come back identical, bounds and flags included"""
        ps = reference_params.with_values({"x_d": 2.0 / 3.0, "P_p": 1.1}).with_bounds({"H": (1.0, 4.0)}).with_free(["H"])
        path = str(work_dir / "rt.params")
        save_parameter_set(ps, path)
        assert load_parameter_set(path) == ps

    def test_defaults_write_no_bound_lines(self, reference_params):
        text = format_parameter_set(reference_params)
        assert ".lower" not in text
        assert ".free" not in text
        assert "x_d = 2.633  # pu" in text

    def test_unknown_key(self, work_dir):
        path = write(work_dir / "u.params", "x_d = 2.5\nfoo = 1\n")
        with pytest.raises(ParameterFileError) as exc:
            load_parameter_set(path)
        assert exc.value.line == 2
        assert exc.value.key == "foo"

    def test_duplicate_key(self, work_dir):
        path = write(work_dir / "d.params", "x_d = 2.5\nx_d = 2.6\n")
        with pytest.raises(ParameterFileError):
            load_parameter_set(path)

    def test_bad_number(self, work_dir):
        path = write(work_dir / "n.params", "x_d = two\n")
        with pytest.raises(ParameterFileError) as exc:
            load_parameter_set(path)
        assert exc.value.line == 1

    def test_missing_equals(self, work_dir):
        path = write(work_dir / "e.params", "x_d 2.5\n")
        with pytest.raises(ParameterFileError):
            load_parameter_set(path)

    def test_out_of_physical_bounds(self, work_dir):
        """x_d' = -0.1 pu is rejected with the parameter name"""
        path = write(work_dir / "neg.params", "x_dp = -0.1\n")
        with pytest.raises(ParameterBoundError) as exc:
            load_parameter_set(path)
        assert exc.value.name == "x_dp"

    def test_missing_file(self, work_dir):
        with pytest.raises(ParameterFileError):
            load_parameter_set(str(work_dir / "absent.params"))

    def test_split_list(self):
        assert split_list("x_d, x_q ,H,") == ("x_d", "x_q", "H")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
