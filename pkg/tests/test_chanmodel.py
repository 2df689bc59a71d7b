import numpy as np
import pytest

from irsmec.chanmodel import (ChannelFileError, SystemGeometry, calibrated_geometry,
                              generate_channels, link_budgets, load_channels, paper_geometry,
                              save_channels, user_row)


def test_paper_dimensions():
    ch = generate_channels(paper_geometry(30), seed=1)
    assert ch.G.shape == (4, 30)
    assert ch.h_r.shape == (4, 30)
    assert ch.h_d.shape == (4, 4)
    assert np.all(ch.q == 10.0) and ch.noise == 1e-12


def test_no_irs_realization():
    ch = generate_channels(paper_geometry(0), seed=7)
    assert ch.G.shape == (4, 0) and ch.h_r.shape == (4, 0)
    assert np.all(np.abs(ch.h_d) > 0)


def test_deterministic_seed():
    geo = paper_geometry(30)
    assert generate_channels(geo, 3) == generate_channels(geo, 3)
    assert generate_channels(geo, 3) != generate_channels(geo, 4)


def test_direct_links_shared_across_irs_sizes():
    a = generate_channels(paper_geometry(0), 11)
    b = generate_channels(paper_geometry(60), 11)
    np.testing.assert_array_equal(a.h_d, b.h_d)


def test_los_channel_rank_one():
    ch = generate_channels(paper_geometry(30), 0)
    s = np.linalg.svd(ch.G, compute_uv=False)
    assert s[1] < 1e-10 * s[0]


def test_rayleigh_variance_matches_budget():
    geo = paper_geometry(30)
    budgets = link_budgets(geo)
    d = np.concatenate([generate_channels(geo, s).h_d for s in range(700)])  # 700*4 rows
    h_r = np.concatenate([generate_channels(geo, s).h_r for s in range(100)])
    var_d = np.mean(np.abs(d) ** 2, axis=1).reshape(-1, 4).mean(axis=0)
    var_r = np.mean(np.abs(h_r) ** 2, axis=1).reshape(-1, 4).mean(axis=0)
    # 700*4*4 = 11200 samples per user for h_d, 100*30 = 3000... per user for h_r
    np.testing.assert_allclose(var_d, budgets["direct"], rtol=0.05)
    np.testing.assert_allclose(var_r, budgets["irs_user"], rtol=0.05)


def test_pathloss_doubling_distance():
    near = paper_geometry(0, user_positions=((10.0, 0.0),), irs_position=(50.0, 5.0))
    far = paper_geometry(0, user_positions=((20.0, 0.0),), irs_position=(50.0, 5.0))
    p_near = np.mean([np.sum(np.abs(generate_channels(near, s).h_d) ** 2) for s in range(3000)])
    p_far = np.mean([np.sum(np.abs(generate_channels(far, s).h_d) ** 2) for s in range(3000)])
    assert p_far / p_near == pytest.approx(2.0 ** -3, rel=0.06)


def test_calibrated_only_changes_penetration():
    a, b = paper_geometry(30), calibrated_geometry(30)
    assert a.penetration_loss_db == 10.0
    assert b.penetration_loss_db > a.penetration_loss_db
    assert a.user_positions == b.user_positions


def test_geometry_validation():
    with pytest.raises(ValueError):
        SystemGeometry(user_positions=()).validate()
    with pytest.raises(ValueError):
        SystemGeometry(user_positions=((0.0, 0.0),)).validate()  # on top of the AP
    with pytest.raises(ValueError):
        paper_geometry(-1).validate()


def test_user_row_spacing():
    row = np.array(user_row(4, spacing=5.0))
    np.testing.assert_allclose(np.diff(row[:, 0]), 5.0)
    assert np.all(row[:, 1] == row[0, 1])


@pytest.mark.parametrize("n", [0, 1, 30])
def test_save_load_roundtrip(tmp_path, n):
    ch = generate_channels(paper_geometry(n), 5)
    path = tmp_path / "ch.txt"
    save_channels(ch, path)
    back = load_channels(path)
    assert back == ch
    assert back.meta["seed"] == 5


def test_save_is_byte_stable(tmp_path):
    ch = generate_channels(paper_geometry(8), 2)
    save_channels(ch, tmp_path / "a.txt")
    save_channels(load_channels(tmp_path / "a.txt"), tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_truncated_file(tmp_path):
    path = tmp_path / "ch.txt"
    save_channels(generate_channels(paper_geometry(6), 1), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ChannelFileError) as err:
        load_channels(path)
    assert err.value.field in ("h_d", "end")


@pytest.mark.parametrize("old,new,field", [
    ("M 4", "M four", "M"),
    ("noise ", "noize ", "noise"),
    ("[G] 4 6", "[G] 4 5", "G"),
])
def test_corrupt_fields_are_named(tmp_path, old, new, field):
    path = tmp_path / "ch.txt"
    save_channels(generate_channels(paper_geometry(6), 1), path)
    path.write_text(path.read_text().replace(old, new, 1))
    with pytest.raises(ChannelFileError) as err:
        load_channels(path)
    assert err.value.field == field


def test_bad_number_in_matrix(tmp_path):
    path = tmp_path / "ch.txt"
    save_channels(generate_channels(paper_geometry(3), 1), path)
    lines = path.read_text().splitlines()
    i = lines.index(next(l for l in lines if l.startswith("[h_r]"))) + 1
    lines[i] = lines[i].replace(lines[i].split()[0], "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ChannelFileError) as err:
        load_channels(path)
    assert err.value.field == "h_r"
