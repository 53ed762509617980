from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coprimefp.fpdata import (
    AngleRangeError,
    BadMagicError,
    DimensionMismatchError,
    DuplicateCoordinatesError,
    EmptyFileError,
    MalformedLineError,
    Minutia,
    MinutiaeParseError,
    MinutiaeRecord,
    OutOfBoundsError,
    SkeletonImage,
    SkeletonParseError,
    TruncatedPayloadError,
    format_minutiae,
    format_skeleton_pgm,
    group_by_subject,
    load_dataset,
    parse_minutiae_file,
    parse_skeleton,
    save_dataset,
    write_minutiae_file,
    write_skeleton,
)


class TestParseMinutiae:
    def test_single_minutia(self):
        rec = parse_minutiae_file(b"S07 I03 300 300\n120 85 270\n")
        assert (rec.subject_id, rec.impression_id, rec.width, rec.height) == ("S07", "I03", 300, 300)
        assert rec.minutiae == (Minutia(120, 85, 3 * math.pi / 2),)

    def test_comments_blank_lines_and_order(self):
        text = "# exported\nA B 50 40\n\n10 5 0\n# mid comment\n3 7 12.5\n"
        rec = parse_minutiae_file(text)
        assert [(m.x, m.y) for m in rec.minutiae] == [(10, 5), (3, 7)]
        assert rec.minutiae[1].theta == pytest.approx(math.radians(12.5))

    def test_angle_360_rejected(self):
        with pytest.raises(AngleRangeError, match="angle out of range") as exc:
            parse_minutiae_file("S I 300 300\n120 85 360\n")
        assert exc.value.lineno == 2

    def test_negative_angle_rejected(self):
        with pytest.raises(AngleRangeError):
            parse_minutiae_file("S I 300 300\n1 1 -0.5\n")

    def test_duplicate_coordinates(self):
        with pytest.raises(DuplicateCoordinatesError, match="duplicate coordinates") as exc:
            parse_minutiae_file("S I 300 300\n10 10 0\n10 10 90\n")
        assert exc.value.lineno == 3

    @pytest.mark.parametrize("text", ["", "\n\n", "# only a comment\n"])
    def test_empty(self, text):
        with pytest.raises(EmptyFileError):
            parse_minutiae_file(text)

    def test_header_only(self):
        with pytest.raises(EmptyFileError):
            parse_minutiae_file("S I 10 10\n")

    @pytest.mark.parametrize(
        "body, line",
        [
            ("S I 10\n1 1 1\n", 1),
            ("S I ten 10\n1 1 1\n", 1),
            ("S I 10 10\n1 1\n", 2),
            ("S I 10 10\n1 1 1 1\n", 2),
            ("S I 10 10\n1 x 1\n", 2),
            ("S I 10 10\n1 1 nan\n", 2),
        ],
    )
    def test_malformed(self, body, line):
        with pytest.raises(MalformedLineError) as exc:
            parse_minutiae_file(body)
        assert exc.value.lineno == line

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBoundsError):
            parse_minutiae_file("S I 10 10\n10 0 0\n")

    def test_error_names_path(self, tmp_path):
        p = tmp_path / "1_1.min"
        p.write_text("S I 10 10\n1 1 400\n")
        with pytest.raises(AngleRangeError, match="1_1.min: line 2"):
            load_dataset(tmp_path)

    def test_all_errors_share_a_base(self):
        for cls in (EmptyFileError, MalformedLineError, AngleRangeError,
                    DuplicateCoordinatesError, OutOfBoundsError):
            assert issubclass(cls, MinutiaeParseError)


class TestRecordInvariants:
    def test_theta_range(self):
        with pytest.raises(ValueError):
            Minutia(1, 1, 2 * math.pi)
        with pytest.raises(ValueError):
            Minutia(1, 1, -1e-9)

    def test_record_rejects_empty_and_duplicates(self):
        with pytest.raises(ValueError):
            MinutiaeRecord("a", "b", 10, 10, ())
        with pytest.raises(ValueError):
            MinutiaeRecord("a", "b", 10, 10, (Minutia(1, 1, 0), Minutia(1, 1, 1)))

    def test_record_rejects_out_of_bounds(self):
        with pytest.raises(ValueError):
            MinutiaeRecord("a", "b", 10, 10, (Minutia(3, 10, 0),))


# -- round trip -------------------------------------------------------------

_ids = st.text(alphabet="abcdefgXYZ0123456789-", min_size=1, max_size=6)


@st.composite
def records(draw):
    w = draw(st.integers(1, 600))
    h = draw(st.integers(1, 600))
    n = draw(st.integers(1, 30))
    pts = draw(
        st.lists(
            st.tuples(st.integers(0, w - 1), st.integers(0, h - 1)),
            min_size=1, max_size=n, unique=True,
        )
    )
    # degree values with at most 6 decimals are what the file format carries
    degs = draw(st.lists(st.integers(0, 359_999_999), min_size=len(pts), max_size=len(pts)))
    minutiae = tuple(Minutia(x, y, math.radians(d / 1e6)) for (x, y), d in zip(pts, degs))
    return MinutiaeRecord(draw(_ids), draw(_ids), w, h, minutiae)


@settings(max_examples=200, deadline=None)
@given(records())
def test_minutiae_round_trip(rec):
    back = parse_minutiae_file(format_minutiae(rec))
    assert (back.subject_id, back.impression_id, back.width, back.height) == (
        rec.subject_id, rec.impression_id, rec.width, rec.height)
    assert [(m.x, m.y) for m in back.minutiae] == [(m.x, m.y) for m in rec.minutiae]
    for a, b in zip(back.minutiae, rec.minutiae):
        assert abs(math.degrees(a.theta) - math.degrees(b.theta)) <= 5e-7
    # writing the parsed record again is a fixed point
    assert format_minutiae(back) == format_minutiae(rec)


def test_round_trip_float_coordinates():
    rec = MinutiaeRecord("s", "i", 100, 100, (Minutia(10.25, 3.5, 1.0), Minutia(7, 7, 0.0)))
    back = parse_minutiae_file(format_minutiae(rec))
    assert [(m.x, m.y) for m in back.minutiae] == [(10.25, 3.5), (7, 7)]


def test_theta_just_below_full_turn_written_as_zero():
    rec = MinutiaeRecord("s", "i", 10, 10, (Minutia(1, 1, math.nextafter(2 * math.pi, 0)),))
    assert format_minutiae(rec).splitlines()[1] == "1 1 0.000000"


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="0123456789 .-#\nabS", max_size=80))
def test_fuzzed_text_is_either_valid_or_rejected(text):
    try:
        rec = parse_minutiae_file("S I 50 50\n" + text)
    except MinutiaeParseError:
        return
    assert len(rec) >= 1
    seen = set()
    for m in rec.minutiae:
        assert 0 <= m.x < 50 and 0 <= m.y < 50 and 0 <= m.theta < 2 * math.pi
        assert (m.x, m.y) not in seen
        seen.add((m.x, m.y))


# -- skeletons ----------------------------------------------------------------


class TestSkeleton:
    def test_p2_threshold(self):
        sk = parse_skeleton(b"P2\n2 2\n255\n255 0\n0 255\n")
        assert sk.pixels.tolist() == [[1, 0], [0, 1]]

    def test_p2_grayscale_threshold_and_comments(self):
        sk = parse_skeleton(b"P2\n# c\n3 1\n# another\n255\n127 128 200\n")
        assert sk.pixels.tolist() == [[0, 1, 1]]

    def test_p5_truncated(self):
        with pytest.raises(TruncatedPayloadError):
            parse_skeleton(b"P5\n4 4\n255\n" + bytes(8))

    def test_p2_truncated(self):
        with pytest.raises(TruncatedPayloadError):
            parse_skeleton(b"P2\n2 2\n255\n0 0 0\n")

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            parse_skeleton(b"P6\n1 1\n255\n\x00\x00\x00")

    def test_dimension_mismatch(self):
        data = b"P5\n2 2\n255\n" + bytes(4)
        with pytest.raises(DimensionMismatchError):
            parse_skeleton(data, expected_size=(3, 2))
        assert parse_skeleton(data, expected_size=(2, 2)).ridge_pixel_count == 0

    def test_all_zero_is_legal(self):
        sk = parse_skeleton(b"P5\n3 2\n255\n" + bytes(6))
        assert sk.ridge_pixel_count == 0 and sk.pixels.shape == (2, 3)

    def test_sixteen_bit_p5(self):
        payload = (np.array([[0, 40000], [128, 65535]], dtype=">u2")).tobytes()
        sk = parse_skeleton(b"P5\n2 2\n65535\n" + payload)
        assert sk.pixels.tolist() == [[0, 1], [1, 1]]

    def test_bad_header(self):
        with pytest.raises(SkeletonParseError):
            parse_skeleton(b"P5\n2 x\n255\n" + bytes(4))

    def test_pixels_read_only(self):
        sk = SkeletonImage(2, 1, np.array([[0, 1]]))
        with pytest.raises(ValueError):
            sk.pixels[0, 0] = 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**32 - 1))
    def test_p5_round_trip(self, w, h, seed):
        px = np.random.default_rng(seed).integers(0, 2, (h, w)).astype(np.uint8)
        sk = SkeletonImage(w, h, px)
        assert parse_skeleton(format_skeleton_pgm(sk)) == sk


# -- dataset layout --------------------------------------------------------------


def _rec(subject, impression):
    return MinutiaeRecord(subject, impression, 20, 20, (Minutia(1, 2, math.radians(30)), Minutia(5, 5, math.radians(75))))


class TestDataset:
    def test_layout_sorting_and_grouping(self, tmp_path):
        for s in ("2", "10", "1"):
            for i in ("1", "2", "8", "11"):
                write_minutiae_file(_rec(s, i), tmp_path / f"{s}_{i}.min")
        entries = load_dataset(tmp_path)
        order = [(e.record.subject_id, e.record.impression_id) for e in entries]
        assert order[:4] == [("1", "1"), ("1", "2"), ("1", "8"), ("1", "11")]
        assert [o[0] for o in order[::4]] == ["1", "2", "10"]
        groups = group_by_subject(entries)
        assert len(groups["1"]) == 4
        assert all(e.skeleton_absent for e in entries)

    def test_empty_directory(self, tmp_path):
        assert load_dataset(tmp_path) == []

    def test_skeleton_attached_and_checked(self, tmp_path):
        write_minutiae_file(_rec("1", "1"), tmp_path / "1_1.min")
        write_skeleton(SkeletonImage(20, 20, np.eye(20, dtype=np.uint8)), tmp_path / "1_1.pgm")
        write_minutiae_file(_rec("1", "2"), tmp_path / "1_2.min")
        entries = load_dataset(tmp_path)
        assert not entries[0].skeleton_absent and entries[1].skeleton_absent
        write_skeleton(SkeletonImage(21, 20, np.zeros((20, 21))), tmp_path / "1_2.pgm")
        with pytest.raises(DimensionMismatchError, match="1_2.pgm"):
            load_dataset(tmp_path)

    def test_save_load_round_trip(self, tmp_path):
        from coprimefp.fpdata import DatasetEntry

        entries = [DatasetEntry(_rec("1", "1"), SkeletonImage(20, 20, np.eye(20))),
                   DatasetEntry(_rec("1", "2"))]
        save_dataset(entries, tmp_path)
        back = load_dataset(tmp_path)
        assert [e.record for e in back] == [e.record for e in entries]
        assert back[0].skeleton == entries[0].skeleton and back[1].skeleton is None
