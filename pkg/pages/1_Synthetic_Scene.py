import streamlit as st

from utils.data_storage import DATASET_KEY, SCENE_KEY, get_data, get_experiment, store_data
from utils.synthetic import make_scene, save_scene
from utils.visualization import create_disparity_figure, create_frame_strip

st.set_page_config(
    page_title="Synthetic Scene - MambaDepth Desk",
    page_icon="🧊",
    layout="wide",
)

st.title("🧊 Synthetic Scene")

st.markdown("""
A pinhole camera slides sideways past textured planes at known depths.
Every frame comes with its exact depth map and camera position, so the
scene is its own ground truth for training and evaluation.
""")

data_cfg = get_experiment().data

col1, col2, col3 = st.columns(3)
with col1:
    frames = st.number_input("Frames", min_value=3, max_value=200, value=data_cfg.synthetic_frames, step=1)
    seed = st.number_input("Texture seed", min_value=0, value=0, step=1)
with col2:
    width = st.selectbox("Width", [32, 64, 96, 128], index=1)
    height = st.selectbox("Height", [32, 64, 96, 128], index=1)
with col3:
    static = st.checkbox("Static camera", value=data_cfg.synthetic_static)
    slanted = st.checkbox("Add floor plane")
    low_texture = st.checkbox("Add low-texture patch")

if st.button("Generate Scene", use_container_width=True):
    with st.spinner("Rendering frames..."):
        try:
            scene = make_scene(num_frames=int(frames), width=width, height=height, seed=int(seed),
                               static=static, slanted=slanted, low_texture=low_texture)
            store_data(SCENE_KEY, scene)
            store_data(DATASET_KEY, scene.triplets())
            st.success(f"Rendered {len(scene)} frames; {len(scene) - 2} training triplets ready")
        except Exception as e:
            st.error(f"Error generating scene: {str(e)}")

scene = get_data(SCENE_KEY)
if scene is None:
    st.info("Generate a scene to preview it here.")
    st.stop()

index = st.slider("Frame", min_value=1, max_value=len(scene) - 2, value=len(scene) // 2)
st.plotly_chart(
    create_frame_strip([scene.frames[index - 1], scene.frames[index], scene.frames[index + 1]],
                       titles=[f"t-1 ({index - 1})", f"t ({index})", f"t+1 ({index + 1})"]),
    use_container_width=True,
)
col1, col2 = st.columns(2)
with col1:
    st.plotly_chart(create_disparity_figure(scene.depths[index], title="Ground-truth depth (m)"),
                    use_container_width=True)
with col2:
    st.plotly_chart(create_disparity_figure(scene.consistency_mask(index, index - 1).astype(float),
                                            title="Pixels visible in frame t-1"),
                    use_container_width=True)

st.header("Save to Disk")
out_dir = st.text_input("Dataset directory", value="synthetic_scene")
if st.button("Save Scene"):
    try:
        save_scene(scene, out_dir)
        st.success(f"Saved frames, depth maps, intrinsics and poses to {out_dir}")
    except Exception as e:
        st.error(f"Error saving scene: {str(e)}")
