"""H.264 Annex-B header parsing: NAL units, SPS/PPS, slice headers, GOP scan.

Parses exactly far enough to recover what the restoration pipeline needs:
per-picture frame type (I or P) and the slice quantization parameter.
Macroblock-level entropy decoding (CAVLC/CABAC) is out of scope; per-block
QP deltas and motion vectors from real streams arrive via sidecar files.
"""
from __future__ import annotations

from dataclasses import dataclass, field

# nal_unit_type values
NAL_SLICE_NON_IDR = 1
NAL_SLICE_IDR = 5
NAL_SPS = 7
NAL_PPS = 8

_SLICE_TYPE_NAMES = {0: "P", 1: "B", 2: "I", 3: "SP", 4: "SI"}


class BitstreamError(ValueError):
    """Malformed or non-Annex-B input."""


class UnsupportedStreamError(BitstreamError):
    """Stream uses a feature outside header-level parsing support."""


class BitReaderUnderflow(BitstreamError):
    pass


@dataclass
class NalUnit:
    nal_ref_idc: int
    nal_unit_type: int
    payload: bytes  # RBSP: emulation-prevention bytes removed
    truncated: bool = False
    leading_zeros: int = 0  # zero bytes before this unit's 00 00 01 start code


@dataclass
class SpsInfo:
    sps_id: int
    width: int
    height: int
    log2_max_frame_num: int
    pic_order_cnt_type: int
    log2_max_pic_order_cnt_lsb: int
    delta_pic_order_always_zero: bool
    frame_mbs_only: bool
    chroma_format_idc: int = 1


@dataclass
class PpsInfo:
    pps_id: int
    sps_id: int
    pic_init_qp_minus26: int
    entropy_coding_mode: bool
    bottom_field_pic_order_in_frame_present: bool
    num_ref_idx_l0_default_active: int
    num_ref_idx_l1_default_active: int
    weighted_pred: bool
    weighted_bipred_idc: int
    deblocking_filter_control_present: bool
    redundant_pic_cnt_present: bool


@dataclass
class SliceInfo:
    frame_type: str  # "I" or "P"
    slice_qp: int
    frame_num: int
    first_mb_in_slice: int = 0


@dataclass
class PictureInfo:
    frame_type: str
    slice_qp: int
    frame_num: int
    slices: list[SliceInfo] = field(default_factory=list)


class BitReader:
    """MSB-first reader over an RBSP byte string."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0  # bit position

    def bits_left(self) -> int:
        return 8 * len(self.data) - self.pos

    def read_bit(self) -> int:
        if self.pos >= 8 * len(self.data):
            raise BitReaderUnderflow("bit reader exhausted")
        byte = self.data[self.pos >> 3]
        bit = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def read_bits(self, n: int) -> int:
        value = 0
        for _ in range(n):
            value = (value << 1) | self.read_bit()
        return value

    def read_ue(self) -> int:
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
            if zeros > 32:
                raise BitstreamError("exp-Golomb prefix too long")
        return (1 << zeros) - 1 + self.read_bits(zeros)

    def read_se(self) -> int:
        k = self.read_ue()
        mag = (k + 1) // 2
        return mag if k % 2 == 1 else -mag


def remove_emulation_prevention(raw: bytes) -> bytes:
    """Drop the 0x03 escape byte after every 00 00 pair."""
    return raw.replace(b"\x00\x00\x03", b"\x00\x00")


def split_annexb(data: bytes) -> list[NalUnit]:
    """Split an Annex-B elementary stream into NAL units in stream order.

    Leading zero bytes before each start code (the fourth byte of a 4-byte
    start code, or padding) are recorded on the unit so a re-assembler can
    reproduce the original stream byte for byte.
    """
    if not data:
        return []
    n = len(data)
    first = data.find(b"\x00\x00\x01")
    if first < 0:
        raise BitstreamError("not Annex-B: no start code found")
    if any(data[:first]):
        raise BitstreamError("not Annex-B: non-zero bytes before first start code")
    starts = []  # offsets of the byte right after each start code
    i = first
    while i >= 0:
        starts.append(i + 3)
        i = data.find(b"\x00\x00\x01", i + 3)
    units = []
    prev_zeros = first
    for k, begin in enumerate(starts):
        end = starts[k + 1] - 3 if k + 1 < len(starts) else n
        # trailing zeros belong to the next unit's start code prefix
        zeros_after = 0
        while end > begin and data[end - 1] == 0:
            end -= 1
            zeros_after += 1
        raw = data[begin:end]
        leading = prev_zeros
        prev_zeros = zeros_after
        if not raw:
            units.append(NalUnit(0, 0, b"", truncated=True, leading_zeros=leading))
            continue
        header = raw[0]
        if header & 0x80:
            raise BitstreamError(f"forbidden_zero_bit set in NAL header 0x{header:02x}")
        units.append(
            NalUnit(
                nal_ref_idc=(header >> 5) & 0x3,
                nal_unit_type=header & 0x1F,
                payload=remove_emulation_prevention(raw[1:]),
                leading_zeros=leading,
            )
        )
    return units


def _skip_scaling_list(r: BitReader, size: int):
    last, nxt = 8, 8
    for _ in range(size):
        if nxt != 0:
            nxt = (last + r.read_se() + 256) % 256
        if nxt != 0:
            last = nxt


_HIGH_PROFILES = {100, 110, 122, 244, 44, 83, 86, 118, 128, 138, 139, 134, 135}


def parse_sps(unit: NalUnit) -> SpsInfo:
    if unit.nal_unit_type != NAL_SPS:
        raise BitstreamError(f"not an SPS NAL (type {unit.nal_unit_type})")
    r = BitReader(unit.payload)
    profile_idc = r.read_bits(8)
    r.read_bits(8)  # constraint flags + reserved
    r.read_bits(8)  # level_idc
    sps_id = r.read_ue()
    chroma_format_idc = 1
    if profile_idc in _HIGH_PROFILES:
        chroma_format_idc = r.read_ue()
        if chroma_format_idc == 3:
            raise UnsupportedStreamError("separate colour planes / 4:4:4 chroma")
        if chroma_format_idc != 1:
            raise UnsupportedStreamError(f"chroma_format_idc {chroma_format_idc} (only 4:2:0)")
        bit_depth_luma = r.read_ue() + 8
        bit_depth_chroma = r.read_ue() + 8
        if bit_depth_luma != 8 or bit_depth_chroma != 8:
            raise UnsupportedStreamError("bit depth above 8")
        r.read_bit()  # qpprime_y_zero_transform_bypass
        if r.read_bit():  # seq_scaling_matrix_present
            for idx in range(8):
                if r.read_bit():
                    _skip_scaling_list(r, 16 if idx < 6 else 64)
    log2_max_frame_num = r.read_ue() + 4
    poc_type = r.read_ue()
    log2_max_poc_lsb = 0
    delta_poc_always_zero = False
    if poc_type == 0:
        log2_max_poc_lsb = r.read_ue() + 4
    elif poc_type == 1:
        delta_poc_always_zero = bool(r.read_bit())
        r.read_se()
        r.read_se()
        for _ in range(r.read_ue()):
            r.read_se()
    r.read_ue()  # max_num_ref_frames
    r.read_bit()  # gaps_in_frame_num_value_allowed
    pic_width_in_mbs = r.read_ue() + 1
    pic_height_in_map_units = r.read_ue() + 1
    frame_mbs_only = bool(r.read_bit())
    if not frame_mbs_only:
        r.read_bit()  # mb_adaptive_frame_field
    r.read_bit()  # direct_8x8_inference
    crop_l = crop_r = crop_t = crop_b = 0
    if r.read_bit():  # frame_cropping_flag
        crop_l = r.read_ue()
        crop_r = r.read_ue()
        crop_t = r.read_ue()
        crop_b = r.read_ue()
    # 4:2:0 crop units: 2 horizontally, 2 * (2 - frame_mbs_only) vertically
    width = pic_width_in_mbs * 16 - 2 * (crop_l + crop_r)
    height = pic_height_in_map_units * 16 * (2 - frame_mbs_only)
    height -= 2 * (2 - frame_mbs_only) * (crop_t + crop_b)
    return SpsInfo(
        sps_id=sps_id,
        width=width,
        height=height,
        log2_max_frame_num=log2_max_frame_num,
        pic_order_cnt_type=poc_type,
        log2_max_pic_order_cnt_lsb=log2_max_poc_lsb,
        delta_pic_order_always_zero=delta_poc_always_zero,
        frame_mbs_only=frame_mbs_only,
        chroma_format_idc=chroma_format_idc,
    )


def parse_pps(unit: NalUnit) -> PpsInfo:
    if unit.nal_unit_type != NAL_PPS:
        raise BitstreamError(f"not a PPS NAL (type {unit.nal_unit_type})")
    r = BitReader(unit.payload)
    pps_id = r.read_ue()
    sps_id = r.read_ue()
    entropy_coding_mode = bool(r.read_bit())
    bottom_field_present = bool(r.read_bit())
    num_slice_groups = r.read_ue() + 1
    if num_slice_groups > 1:
        raise UnsupportedStreamError("slice groups (FMO)")
    num_ref_l0 = r.read_ue() + 1
    num_ref_l1 = r.read_ue() + 1
    weighted_pred = bool(r.read_bit())
    weighted_bipred_idc = r.read_bits(2)
    pic_init_qp_minus26 = r.read_se()
    if not -26 <= pic_init_qp_minus26 <= 25:
        raise BitstreamError(f"pic_init_qp_minus26 {pic_init_qp_minus26} out of range")
    r.read_se()  # pic_init_qs_minus26
    r.read_se()  # chroma_qp_index_offset
    deblocking_control = bool(r.read_bit())
    r.read_bit()  # constrained_intra_pred
    redundant_pic_cnt = bool(r.read_bit())
    return PpsInfo(
        pps_id=pps_id,
        sps_id=sps_id,
        pic_init_qp_minus26=pic_init_qp_minus26,
        entropy_coding_mode=entropy_coding_mode,
        bottom_field_pic_order_in_frame_present=bottom_field_present,
        num_ref_idx_l0_default_active=num_ref_l0,
        num_ref_idx_l1_default_active=num_ref_l1,
        weighted_pred=weighted_pred,
        weighted_bipred_idc=weighted_bipred_idc,
        deblocking_filter_control_present=deblocking_control,
        redundant_pic_cnt_present=redundant_pic_cnt,
    )


def _skip_ref_pic_list_modification(r: BitReader):
    if r.read_bit():
        while True:
            idc = r.read_ue()
            if idc == 3:
                break
            if idc in (0, 1):
                r.read_ue()  # abs_diff_pic_num_minus1
            elif idc == 2:
                r.read_ue()  # long_term_pic_num
            else:
                raise BitstreamError(f"invalid modification_of_pic_nums_idc {idc}")


def _skip_pred_weight_table(r: BitReader, sps: SpsInfo, num_ref_l0: int):
    r.read_ue()  # luma_log2_weight_denom
    if sps.chroma_format_idc != 0:
        r.read_ue()  # chroma_log2_weight_denom
    for _ in range(num_ref_l0):
        if r.read_bit():  # luma_weight_l0_flag
            r.read_se()
            r.read_se()
        if sps.chroma_format_idc != 0 and r.read_bit():
            for _ in range(2):
                r.read_se()
                r.read_se()


def _skip_dec_ref_pic_marking(r: BitReader, idr: bool):
    if idr:
        r.read_bit()  # no_output_of_prior_pics
        r.read_bit()  # long_term_reference
        return
    if r.read_bit():  # adaptive_ref_pic_marking_mode
        while True:
            op = r.read_ue()
            if op == 0:
                break
            if op in (1, 3):
                r.read_ue()
            if op == 2:
                r.read_ue()
            if op in (3, 6):
                r.read_ue()
            if op == 4:
                r.read_ue()


def parse_slice_header(unit: NalUnit, sps: SpsInfo, pps: PpsInfo) -> SliceInfo:
    if unit.nal_unit_type not in (NAL_SLICE_NON_IDR, NAL_SLICE_IDR):
        raise BitstreamError(f"not a coded slice NAL (type {unit.nal_unit_type})")
    idr = unit.nal_unit_type == NAL_SLICE_IDR
    r = BitReader(unit.payload)
    first_mb = r.read_ue()
    slice_type = r.read_ue()
    base_type = slice_type % 5
    name = _SLICE_TYPE_NAMES.get(base_type)
    if name == "B":
        raise UnsupportedStreamError("B-frames (encode with bframes=0)")
    if name in ("SP", "SI") or name is None:
        raise UnsupportedStreamError(f"slice type {slice_type}")
    r.read_ue()  # pic_parameter_set_id
    frame_num = r.read_bits(sps.log2_max_frame_num)
    if not sps.frame_mbs_only:
        if r.read_bit():  # field_pic_flag
            raise UnsupportedStreamError("field coding")
    if idr:
        r.read_ue()  # idr_pic_id
    if sps.pic_order_cnt_type == 0:
        r.read_bits(sps.log2_max_pic_order_cnt_lsb)
        if pps.bottom_field_pic_order_in_frame_present:
            r.read_se()
    elif sps.pic_order_cnt_type == 1 and not sps.delta_pic_order_always_zero:
        r.read_se()
        if pps.bottom_field_pic_order_in_frame_present:
            r.read_se()
    if pps.redundant_pic_cnt_present:
        r.read_ue()
    num_ref_l0 = pps.num_ref_idx_l0_default_active
    if name == "P":
        if r.read_bit():  # num_ref_idx_active_override
            num_ref_l0 = r.read_ue() + 1
        _skip_ref_pic_list_modification(r)
        if pps.weighted_pred:
            _skip_pred_weight_table(r, sps, num_ref_l0)
    if unit.nal_ref_idc != 0:
        _skip_dec_ref_pic_marking(r, idr)
    if pps.entropy_coding_mode and name != "I":
        r.read_ue()  # cabac_init_idc
    slice_qp_delta = r.read_se()
    slice_qp = 26 + pps.pic_init_qp_minus26 + slice_qp_delta
    if not 0 <= slice_qp <= 51:
        raise BitstreamError(f"slice QP {slice_qp} out of [0, 51]")
    return SliceInfo(frame_type=name, slice_qp=slice_qp, frame_num=frame_num, first_mb_in_slice=first_mb)


def scan_pictures(data: bytes) -> list[PictureInfo]:
    """One PictureInfo per coded picture, in decode order."""
    if not data:
        return []
    sps_by_id: dict[int, SpsInfo] = {}
    pps_by_id: dict[int, PpsInfo] = {}
    pictures: list[PictureInfo] = []
    for unit in split_annexb(data):
        if unit.nal_unit_type == NAL_SPS:
            sps = parse_sps(unit)
            sps_by_id[sps.sps_id] = sps
        elif unit.nal_unit_type == NAL_PPS:
            pps = parse_pps(unit)
            pps_by_id[pps.pps_id] = pps
        elif unit.nal_unit_type in (NAL_SLICE_NON_IDR, NAL_SLICE_IDR):
            if not pps_by_id or not sps_by_id:
                raise BitstreamError("coded slice before SPS/PPS")
            # single-SPS/PPS streams are the supported case; take the active ones
            pps = _active_pps(unit, pps_by_id)
            sps = sps_by_id.get(pps.sps_id)
            if sps is None:
                raise BitstreamError(f"PPS {pps.pps_id} references unknown SPS {pps.sps_id}")
            info = parse_slice_header(unit, sps, pps)
            if info.first_mb_in_slice == 0:
                pictures.append(
                    PictureInfo(
                        frame_type=info.frame_type,
                        slice_qp=info.slice_qp,
                        frame_num=info.frame_num,
                        slices=[info],
                    )
                )
            else:
                if not pictures:
                    raise BitstreamError("slice with first_mb_in_slice > 0 opens the stream")
                pic = pictures[-1]
                pic.slices.append(info)
                # a picture counts as I only if every slice is I
                if info.frame_type != "I" and pic.frame_type == "I":
                    pic.frame_type = info.frame_type
    return pictures


def _active_pps(unit: NalUnit, pps_by_id: dict[int, PpsInfo]) -> PpsInfo:
    r = BitReader(unit.payload)
    r.read_ue()  # first_mb_in_slice
    r.read_ue()  # slice_type
    pps_id = r.read_ue()
    pps = pps_by_id.get(pps_id)
    if pps is None:
        raise BitstreamError(f"slice references unknown PPS {pps_id}")
    return pps


def scan_gop_structure(data: bytes) -> list[list[PictureInfo]]:
    """Group decode-order pictures into GOPs; a GOP starts at each I picture."""
    pictures = scan_pictures(data)
    gops: list[list[PictureInfo]] = []
    for pic in pictures:
        if pic.frame_type == "I" or not gops:
            gops.append([])
        gops[-1].append(pic)
    return gops
