import numpy as np
import pytest

from maskrel import signals as sg

FS = 48000.0


def sine(freq, duration=1.0, amp=1.0, fs=FS):
    t = np.arange(int(duration * fs)) / fs
    return sg.MonoSignal(amp * np.sin(2 * np.pi * freq * t), fs)


def steady_rms(sig: sg.MonoSignal, skip=0.25):
    head = int(skip * sig.sample_rate)
    tail = int(0.05 * sig.sample_rate)
    return float(np.sqrt(np.mean(sig.samples[head:-tail] ** 2)))


class TestLevels:
    def test_reference_point(self):
        assert sg.level_to_amplitude(100.0) == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_65_db(self):
        assert sg.level_to_amplitude(65.0) == pytest.approx(0.025150, abs=5e-6)
        assert sg.level_to_amplitude(65.0) == pytest.approx(
            np.sqrt(2) * 10 ** (-35 / 20), rel=1e-12
        )

    def test_nonfinite_rejected(self):
        for bad in (-np.inf, np.inf, np.nan):
            with pytest.raises(sg.SignalError):
                sg.level_to_amplitude(bad)

    def test_round_trip(self):
        for level in (-20.0, 0.0, 45.0, 65.0, 100.0):
            amp = sg.level_to_amplitude(level)
            assert sg.rms_to_level(amp / np.sqrt(2)) == pytest.approx(level, abs=1e-9)

    def test_synthesized_sine_rms_round_trip(self):
        # integer number of cycles so the RMS estimate is exact
        for level, freq in ((65.0, 800.0), (45.0, 480.0)):
            x = sine(freq, duration=1.0, amp=sg.level_to_amplitude(level))
            assert sg.rms_to_level(x.rms()) == pytest.approx(level, abs=0.01)


class TestHannGate:
    def test_endpoints_and_midpoint(self):
        x = sg.MonoSignal(np.ones(int(0.4 * FS)), FS)
        g = sg.hann_gate(x, 0.025)
        assert g.samples[0] == 0.0
        assert g.samples[-1] == 0.0
        assert g.samples[int(0.0125 * FS)] == pytest.approx(0.5, abs=1e-9)

    def test_zero_ramp_identity(self):
        x = sine(100, duration=0.1)
        g = sg.hann_gate(x, 0.0)
        assert np.array_equal(g.samples, x.samples)

    def test_middle_untouched(self):
        x = sg.MonoSignal(np.random.default_rng(0).normal(size=int(0.4 * FS)), FS)
        g = sg.hann_gate(x, 0.025)
        n_ramp = int(0.025 * FS)
        assert np.array_equal(g.samples[n_ramp:-n_ramp], x.samples[n_ramp:-n_ramp])
        assert len(g) == len(x)

    def test_ramp_too_long(self):
        x = sg.MonoSignal(np.ones(100), FS)
        with pytest.raises(sg.SignalError):
            sg.hann_gate(x, 0.5)

    def test_not_idempotent_for_positive_ramp(self):
        x = sg.MonoSignal(np.ones(int(0.4 * FS)), FS)
        once = sg.hann_gate(x, 0.025)
        twice = sg.hann_gate(once, 0.025)
        assert not np.array_equal(once.samples, twice.samples)


class TestButterworth:
    @pytest.mark.parametrize("cutoff,order", [(380.0, 4), (770.0, 5)])
    def test_minus_3db_at_cutoff(self, cutoff, order):
        x = sine(cutoff, duration=2.0)
        y = sg.butterworth_lowpass(x, cutoff, order)
        gain_db = 20 * np.log10(steady_rms(y) / steady_rms(x))
        assert gain_db == pytest.approx(-3.0103, abs=0.2)

    def test_dc_gain(self):
        x = sg.MonoSignal(np.full(int(2 * FS), 0.7), FS)
        y = sg.butterworth_lowpass(x, 380.0, 4)
        assert np.mean(y.samples[-1000:]) / 0.7 == pytest.approx(1.0, abs=1e-3)

    def test_stopband_attenuation_order5(self):
        cutoff = 770.0
        x = sine(4 * cutoff, duration=2.0)
        y = sg.butterworth_lowpass(x, cutoff, 5)
        att_db = 20 * np.log10(steady_rms(y) / steady_rms(x))
        assert att_db <= -55.0

    def test_invalid_parameters(self):
        x = sine(100, duration=0.1)
        with pytest.raises(sg.SignalError):
            sg.butterworth_lowpass(x, 0.0, 4)
        with pytest.raises(sg.SignalError):
            sg.butterworth_lowpass(x, 30000.0, 4)
        with pytest.raises(sg.SignalError):
            sg.butterworth_lowpass(x, 380.0, 3)


class TestGammatone:
    def test_erb_formula(self):
        assert sg.erb_bandwidth(800.0) == pytest.approx(111.0512, rel=1e-6)

    def test_on_frequency_gain(self):
        x = sine(800.0, duration=1.0)
        y = sg.gammatone_bandpass(x, 800.0, sg.erb_bandwidth(800.0))
        gain_db = 20 * np.log10(steady_rms(y) / steady_rms(x))
        assert abs(gain_db) <= 0.1

    def test_peak_frequency_and_erb(self):
        imp = sg.MonoSignal(np.r_[1.0, np.zeros(2**15 - 1)], FS)
        y = sg.gammatone_bandpass(imp, 800.0, sg.erb_bandwidth(800.0))
        nfft = 2**20
        power = np.abs(np.fft.rfft(y.samples, nfft)) ** 2
        freqs = np.fft.rfftfreq(nfft, 1 / FS)
        peak = freqs[int(np.argmax(power))]
        assert abs(peak - 800.0) <= 2.0
        erb_measured = np.trapezoid(power, freqs) / power.max()
        assert erb_measured == pytest.approx(sg.erb_bandwidth(800.0), rel=0.05)

    def test_off_frequency_attenuation(self):
        x = sine(160.0, duration=1.0)
        y = sg.gammatone_bandpass(x, 800.0, sg.erb_bandwidth(800.0))
        att_db = 20 * np.log10(steady_rms(y) / steady_rms(x))
        assert att_db <= -40.0

    def test_order_and_fc_validation(self):
        x = sine(100, duration=0.1)
        with pytest.raises(sg.SignalError):
            sg.gammatone_bandpass(x, 800.0, 111.0, order=3)
        with pytest.raises(sg.SignalError):
            sg.gammatone_bandpass(x, -5.0, 111.0)


class TestDownsample:
    def test_48k_to_2k(self):
        x = sg.MonoSignal(np.arange(19200, dtype=float), FS)
        y = sg.downsample(x, 2000.0)
        assert len(y) == 800
        assert y.sample_rate == 2000.0
        assert np.array_equal(y.samples, np.arange(19200, dtype=float)[::24])

    def test_identity(self):
        x = sine(100, duration=0.01)
        y = sg.downsample(x, FS)
        assert np.array_equal(y.samples, x.samples)

    def test_non_integer_ratio(self):
        x = sine(100, duration=0.01)
        with pytest.raises(sg.SignalError):
            sg.downsample(x, 7000.0)

    def test_constant_preserved(self):
        x = sg.MonoSignal(np.full(4800, 3.25), FS)
        y = sg.downsample(x, 2000.0)
        assert np.all(y.samples == 3.25)

    def test_truncates_to_whole_frames(self):
        x = sg.MonoSignal(np.arange(100, dtype=float), FS)
        y = sg.downsample(x, 2000.0)
        assert len(y) == 4  # floor(100 / 24)


class TestGaussianNoise:
    def test_zero_sigma(self):
        y = sg.gaussian_noise(1000, 0.0, np.random.default_rng(0), FS)
        assert np.all(y.samples == 0.0)

    def test_sample_std(self):
        y = sg.gaussian_noise(10**6, 0.01, np.random.default_rng(7), FS)
        assert 0.0099 <= np.std(y.samples) <= 0.0101

    def test_deterministic(self):
        a = sg.gaussian_noise(100, 1.0, np.random.default_rng(3), FS)
        b = sg.gaussian_noise(100, 1.0, np.random.default_rng(3), FS)
        assert np.array_equal(a.samples, b.samples)

    def test_negative_sigma(self):
        with pytest.raises(sg.SignalError):
            sg.gaussian_noise(10, -1.0, np.random.default_rng(0), FS)


class TestInvariants:
    @pytest.mark.parametrize("filt", [
        lambda s: sg.butterworth_lowpass(s, 380.0, 4),
        lambda s: sg.butterworth_lowpass(s, 770.0, 5),
        lambda s: sg.gammatone_bandpass(s, 800.0, sg.erb_bandwidth(800.0)),
        lambda s: sg.downsample(s, 2000.0),
    ])
    def test_filters_linear(self, filt):
        rng = np.random.default_rng(11)
        x = sg.MonoSignal(rng.normal(size=4800), FS)
        y = sg.MonoSignal(rng.normal(size=4800), FS)
        a, b = 2.5, -0.75
        combined = filt(sg.MonoSignal(a * x.samples + b * y.samples, FS))
        separate = a * filt(x).samples + b * filt(y).samples
        scale = np.max(np.abs(separate)) or 1.0
        assert np.allclose(combined.samples, separate, atol=1e-9 * scale)

    def test_signal_invariants(self):
        with pytest.raises(sg.SignalError):
            sg.MonoSignal(np.array([1.0, np.nan]), FS)
        with pytest.raises(sg.SignalError):
            sg.MonoSignal(np.ones(10), -1.0)
        with pytest.raises(sg.SignalError):
            sg.StereoSignal(
                sg.MonoSignal(np.ones(10), FS), sg.MonoSignal(np.ones(9), FS)
            )
