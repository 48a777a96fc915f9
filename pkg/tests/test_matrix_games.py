import numpy as np
import pytest

from synklr.env_core import IllegalActionError
from synklr.matrix_games import (
    MatrixGame,
    MatrixGameEnv,
    best_response,
    exact_ch_level,
    exact_klr_level,
    lever_game,
    load_matrix_game,
    verification_suite,
)


def brute_force_br(payoff, partner):
    vals = [sum(payoff[i][j] * partner[j] for j in range(len(partner))) for i in range(len(payoff))]
    best = max(vals)
    return vals.index(best)


def test_validation():
    with pytest.raises(ValueError):
        MatrixGame(np.ones((2, 3)))
    with pytest.raises(ValueError):
        MatrixGame(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        exact_klr_level(lever_game(), -1)
    with pytest.raises(ValueError):
        exact_ch_level(lever_game(), 0)


def test_lever_levels():
    g = lever_game(3, 0.9)
    assert np.allclose(exact_klr_level(g, 0), 1 / 3)
    # uniform partner makes levers 1 and 2 tie; the first maximiser wins
    assert np.argmax(exact_klr_level(g, 1)) == 1
    assert np.argmax(exact_klr_level(g, 2)) == 1


def test_klr_matches_brute_force_on_suite():
    for g in verification_suite(0):
        policy = [1 / g.n] * g.n
        for k in range(1, 4):
            i = brute_force_br(g.payoff.tolist(), policy)
            policy = [0.0] * g.n
            policy[i] = 1.0
            assert np.array_equal(exact_klr_level(g, k), policy)


def test_suite_is_symmetric_and_tie_free():
    suite = verification_suite(0)
    assert len(suite) == 20
    for g in suite:
        assert np.allclose(g.payoff, g.payoff.T)
        p = np.full(g.n, 1 / g.n)
        for _ in range(3):
            ev = np.sort(g.expected_payoffs(p))
            assert ev[-1] - ev[-2] >= 0.05
            p = best_response(g, p)
    assert [g.payoff.tolist() for g in verification_suite(0)] == [g.payoff.tolist() for g in suite]


def test_ch_level_mixes_lower_levels():
    g = MatrixGame(np.array([[1.0, 0.0, 0.0], [0.0, 0.6, 0.0], [0.0, 0.0, 0.55]]))
    # level 1 vs uniform -> action 0; CH level 2 mixes only level 1 -> action 0
    assert np.argmax(exact_ch_level(g, 1)) == 0
    assert np.argmax(exact_ch_level(g, 2)) == 0
    assert np.array_equal(exact_ch_level(g, 1), exact_klr_level(g, 1))


def test_load_matrix_game(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# comment\n1 0\n0 2  # trailing\n")
    g = load_matrix_game(p)
    assert g.name == "g" and g.payoff.tolist() == [[1, 0], [0, 2]]
    (tmp_path / "bad.txt").write_text("1 0\n0\n")
    with pytest.raises(ValueError):
        load_matrix_game(tmp_path / "bad.txt")


def test_env_plays_one_shot():
    g = MatrixGame(np.array([[3.0, 1.0], [0.0, 2.0]]))
    env = MatrixGameEnv(g)
    env.reset(0)
    assert env.current_player == 0 and env.legal_actions(1) == []
    _, r, done = env.step(0)
    assert (r, done) == (0.0, False)
    assert env.observe(1) == env.observe(0)  # seat 1 cannot see seat 0's move
    _, r, done = env.step(1)
    assert (r, done) == (1.0, True)
    with pytest.raises(IllegalActionError):
        env.step(0)
    env.reset(1)
    with pytest.raises(IllegalActionError):
        env.step(5)
