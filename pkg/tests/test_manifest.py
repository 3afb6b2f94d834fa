import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import record, write_dicom, write_png
from mammo_bench.errors import (
    CorruptPixelData,
    DuplicateImageId,
    ImageFileNotFound,
    InvalidEnumValue,
    MissingColumn,
    UnsupportedFormat,
)
from mammo_bench.manifest import (
    DatasetManifest,
    dataset_summary,
    invert_mono1,
    load_image,
    load_manifest,
    write_manifest,
)

HEADER = "patient_id,image_id,laterality,view,age,cancer,biopsy,source_path\n"


def write_csv(tmp_path, body, header=HEADER):
    p = tmp_path / "manifest.csv"
    p.write_text(header + body)
    return p


def test_load_two_rows(tmp_path):
    p = write_csv(tmp_path, "10,a,L,CC,61,0,0,x.png\n10,b,R,MLO,61,1,1,y.png\n")
    m = load_manifest(p)
    assert len(m) == 2
    assert m.patient_ids == ["10"]
    assert m.patient_index["10"] == (0, 1)
    assert [r.image_id for r in m.records] == ["a", "b"]
    assert m.records[1].cancer == 1 and m.records[1].view == "MLO"


def test_missing_cancer_column(tmp_path):
    p = write_csv(tmp_path, "1,a,L,CC,50,0\n", header="patient_id,image_id,laterality,view,age,biopsy\n")
    with pytest.raises(MissingColumn) as exc:
        load_manifest(p)
    assert exc.value.column == "cancer"


def test_duplicate_image_id(tmp_path):
    p = write_csv(tmp_path, "1,img1,L,CC,50,0,0,\n2,img1,R,CC,50,0,0,\n")
    with pytest.raises(DuplicateImageId):
        load_manifest(p)


@pytest.mark.parametrize(
    "row, field",
    [
        ("1,a,X,CC,50,0,0,", "laterality"),
        ("1,a,L,ZZ,50,0,0,", "view"),
        ("1,a,L,CC,50,2,0,", "cancer"),
        ("1,a,L,CC,50,0,yes,", "biopsy"),
        ("1,a,L,CC,131,0,0,", "age"),
    ],
)
def test_invalid_enum_reports_row_and_field(tmp_path, row, field):
    p = write_csv(tmp_path, "9,ok,L,CC,50,0,0,\n" + row + "\n")
    with pytest.raises(InvalidEnumValue) as exc:
        load_manifest(p)
    assert exc.value.row == 2
    assert exc.value.field == field


def test_missing_age_and_other_view(tmp_path):
    p = write_csv(tmp_path, "1,a,L,AT,,0,0,\n1,b,L,MLO,nan,0,0,\n")
    m = load_manifest(p)
    assert m.records[0].age is None and m.records[1].age is None
    assert m.records[0].view == "other"


def test_extra_columns_warn(tmp_path, caplog):
    p = write_csv(tmp_path, "1,a,L,CC,50,0,0,,x\n", header=HEADER.strip() + ",site_id\n")
    with caplog.at_level(logging.WARNING):
        m = load_manifest(p)
    assert len(m) == 1
    assert "site_id" in caplog.text


ids = st.text(alphabet="abcdefghijklmnop0123456789_", min_size=1, max_size=6)
rows = st.lists(
    st.tuples(
        ids,
        st.sampled_from("LR"),
        st.sampled_from(["CC", "MLO", "other"]),
        st.one_of(st.none(), st.integers(0, 130)),
        st.integers(0, 1),
        st.integers(0, 1),
    ),
    max_size=25,
)


@settings(max_examples=60, deadline=None)
@given(rows)
def test_csv_round_trip(tmp_path_factory, rows):
    recs = [record(pid, f"img{i}", lat, c, b, age, f"{pid}/img{i}.png", view) for i, (pid, lat, view, age, c, b) in enumerate(rows)]
    m = DatasetManifest.from_records(recs)
    p = tmp_path_factory.mktemp("rt") / "m.csv"
    write_manifest(m, p)
    assert load_manifest(p).records == m.records


def test_summary_three_patients():
    m = DatasetManifest.from_records(
        [record("a", "1", age=45), record("b", "2", age=52, cancer=1, biopsy=1), record("c", "3", age=70)]
    )
    s = dataset_summary(m)
    assert s.n_patients == 3 and s.n_images == 3
    assert s.n_cancer_patients == 1
    assert s.image_positive_rate == pytest.approx(1 / 3)
    assert s.age_bin_edges == list(range(45, 80, 5))
    assert s.age_counts == [1, 1, 0, 0, 0, 1]
    assert s.images_per_patient == {1: 3}
    assert s.biopsy_by_cancer == [[2, 0], [0, 1]]


def test_summary_empty():
    s = dataset_summary(DatasetManifest.from_records([]))
    assert (s.n_patients, s.n_images, s.n_cancer_patients) == (0, 0, 0)
    assert s.age_counts == [] and s.images_per_patient == {}
    assert sum(map(sum, s.biopsy_by_cancer)) == 0
    json.loads(s.to_json())


@settings(max_examples=80, deadline=None)
@given(rows)
def test_summary_totals(rows):
    recs = [record(pid, f"img{i}", lat, c, b, age, "", view) for i, (pid, lat, view, age, c, b) in enumerate(rows)]
    m = DatasetManifest.from_records(recs)
    s = dataset_summary(m)
    assert sum(s.age_counts) + s.age_missing == s.n_patients
    assert sum(s.images_per_patient.values()) == s.n_patients
    assert sum(map(sum, s.biopsy_by_cancer)) == s.n_images
    assert sum(map(sum, s.biopsy_by_cancer_patients)) == s.n_patients
    assert 0 <= s.image_positive_rate <= 1
    positive_patients = {r.patient_id for r in recs if r.cancer}
    assert s.n_cancer_patients == len(positive_patients)


def test_summary_json_has_explicit_bins():
    m = DatasetManifest.from_records([record("a", "1", age=47), record("b", "2", age=None)])
    doc = json.loads(dataset_summary(m).to_json())
    assert doc["age_histogram"]["bins"] == [{"lo": 45, "hi": 50, "count": 1}]
    assert doc["age_histogram"]["missing"] == 1


# ---------------------------------------------------------------- pixels


def test_load_png16(tmp_path):
    px = (np.arange(100 * 80, dtype=np.uint32).reshape(100, 80) * 7 % 65536).astype(np.uint16)
    write_png(tmp_path / "p" / "i.png", px)
    raw = load_image(record("p", "i"), tmp_path)
    assert raw.pixels.shape == (100, 80)
    assert raw.bit_depth == 16 and raw.photometric == "MONO2" and raw.window_hint is None
    np.testing.assert_array_equal(raw.pixels, px)


def test_load_png8(tmp_path):
    px = np.arange(64, dtype=np.uint8).reshape(8, 8)
    p = write_png(tmp_path / "a.png", px)
    raw = load_image(p)
    assert raw.bit_depth == 8
    np.testing.assert_array_equal(raw.pixels, px)


def test_dicom_mono1_inverted(tmp_path):
    px = np.full((4, 5), 100, dtype=np.uint16)
    p = write_dicom(tmp_path / "x.dcm", px, bits_stored=12, photometric="MONOCHROME1", window=(2000, 1000))
    raw = load_image(p)
    assert raw.photometric == "MONO2"
    assert raw.bit_depth == 12
    assert (raw.pixels == 3995).all()
    assert raw.window_hint == (2000.0, 1000.0)


def test_dicom_mono2_untouched(tmp_path):
    px = np.arange(20, dtype=np.uint16).reshape(4, 5) * 100
    p = write_dicom(tmp_path / "y.dcm", px)
    raw = load_image(p)
    np.testing.assert_array_equal(raw.pixels, px)
    assert raw.window_hint is None


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**31))
def test_mono1_inversion_involution(bits, seed):
    px = np.random.default_rng(seed).integers(0, 1 << bits, size=(5, 7)).astype(np.uint16)
    once = invert_mono1(px, bits)
    assert once.max() < (1 << bits)
    np.testing.assert_array_equal(invert_mono1(once, bits), px)


def test_missing_file(tmp_path):
    with pytest.raises(ImageFileNotFound):
        load_image(record("nope", "nothing"), tmp_path)
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")


def test_unsupported_format(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("hello")
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_rgb_png_rejected(tmp_path):
    from PIL import Image

    p = tmp_path / "rgb.png"
    Image.new("RGB", (4, 4)).save(p)
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_truncated_png(tmp_path):
    p = write_png(tmp_path / "t.png", np.random.default_rng(0).integers(0, 65535, (64, 64)).astype(np.uint16))
    p.write_bytes(p.read_bytes()[:200])
    with pytest.raises(CorruptPixelData):
        load_image(p)


def test_truncated_dicom(tmp_path):
    p = write_dicom(tmp_path / "t.dcm", np.ones((32, 32), dtype=np.uint16))
    p.write_bytes(p.read_bytes()[:-500])
    with pytest.raises(CorruptPixelData):
        load_image(p)
